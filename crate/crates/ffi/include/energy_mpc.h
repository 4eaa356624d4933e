#ifndef ENERGY_MPC_H
#define ENERGY_MPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EmpcStatus {
  EMPC_STATUS_OK = 0,
  EMPC_STATUS_NULL_POINTER = 1,
  EMPC_STATUS_INVALID_ARGUMENT = 2,
  EMPC_STATUS_SHAPE = 3,
  EMPC_STATUS_NON_FINITE = 4,
  EMPC_STATUS_CONFIG = 5,
  EMPC_STATUS_FORMAT = 6,
  EMPC_STATUS_IO = 7,
  EMPC_STATUS_DIVERGENCE = 8,
  EMPC_STATUS_CONTRACT = 9,
  // `empc_env_step` called before `empc_env_reset`.
  EMPC_STATUS_NOT_RESET = 10,
  EMPC_STATUS_PANIC = 11,
} EmpcStatus;

// Receding-horizon controller rebuilt from a checkpoint.
typedef struct EmpcAgent EmpcAgent;

// Environment instance holding its current state.
typedef struct EmpcEnv EmpcEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length excluding the terminator. Empty after a successful call.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t empc_last_error_message(char *buf, size_t len);

// Create an environment by name (`pendulum`, `cartpole_swingup`,
// `point_mass`).
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be valid for a write.
enum EmpcStatus empc_env_new(const char *name, struct EmpcEnv **out);

// # Safety
// `env` must be null or a handle from [`empc_env_new`] not yet freed.
void empc_env_free(struct EmpcEnv *env);

// Observation and action widths plus the episode length.
//
// # Safety
// `env` must be a live handle; each output must be null or writable.
enum EmpcStatus empc_env_dims(const struct EmpcEnv *env,
                              size_t *state_dim,
                              size_t *action_dim,
                              size_t *episode_length);

// Draw an initial state from `seed` and write its observation.
//
// # Safety
// `env` must be a live handle; `obs` must be valid for `obs_len` doubles.
enum EmpcStatus empc_env_reset(struct EmpcEnv *env, uint64_t seed, double *obs, size_t obs_len);

// Apply `action` (clipped to the bounds), write the next observation and
// the reward of the transition, and set `done` once the episode length is
// reached. The state is unchanged on error.
//
// # Safety
// `env` must be a live handle; the buffers must be valid for their
// lengths; `reward` and `done` must be null or writable.
enum EmpcStatus empc_env_step(struct EmpcEnv *env,
                              const double *action,
                              size_t action_len,
                              double *obs,
                              size_t obs_len,
                              double *reward,
                              bool *done);

// Load a checkpoint written by `energy-mpc train` and build its MPC agent
// for `env`. `seed` selects the planner's sampling streams.
//
// # Safety
// `path` must be a NUL-terminated string, `env` a live handle and `out`
// valid for a write.
enum EmpcStatus empc_agent_load(const char *path,
                                const struct EmpcEnv *env,
                                uint64_t seed,
                                struct EmpcAgent **out);

// # Safety
// `agent` must be null or a handle from [`empc_agent_load`] not yet freed.
void empc_agent_free(struct EmpcAgent *agent);

// Forget the warm start, for use at episode boundaries.
//
// # Safety
// `agent` must be a live handle.
enum EmpcStatus empc_agent_reset(struct EmpcAgent *agent);

// Plan from `obs` at `timestep` and write the first action.
//
// # Safety
// `agent` must be a live handle; the buffers must be valid for their
// lengths.
enum EmpcStatus empc_agent_act(struct EmpcAgent *agent,
                               const double *obs,
                               size_t obs_len,
                               uint64_t timestep,
                               double *action,
                               size_t action_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENERGY_MPC_H */
