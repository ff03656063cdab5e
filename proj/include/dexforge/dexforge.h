#ifndef DEXFORGE_H
#define DEXFORGE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DEXFORGE_BUILDING)
#    define DEXFORGE_API __declspec(dllexport)
#  else
#    define DEXFORGE_API __declspec(dllimport)
#  endif
#else
#  define DEXFORGE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Every function returning dexforge_status leaves a message for
   dexforge_last_error() on failure. */
typedef enum dexforge_status {
  DEXFORGE_OK = 0,
  DEXFORGE_E_PARSE = 1,
  DEXFORGE_E_VALIDATION = 2,
  DEXFORGE_E_DIMENSION_MISMATCH = 3,
  DEXFORGE_E_SINGULAR_UPDATE = 4,
  DEXFORGE_E_INVALID_ROTATION = 5,
  DEXFORGE_E_DEGENERATE_INPUT = 6,
  DEXFORGE_E_MISSING_PROVENANCE = 7,
  DEXFORGE_E_NO_GEOMETRY = 8,
  DEXFORGE_E_SHAPE_MISMATCH = 9,
  DEXFORGE_E_NON_FINITE_STATE = 10,
  DEXFORGE_E_CORRUPT_SHARD = 11,
  DEXFORGE_E_VERSION_MISMATCH = 12,
  DEXFORGE_E_INVALID_RATE = 13,
  DEXFORGE_E_INSUFFICIENT_DATA = 14,
  DEXFORGE_E_IO = 15,
  DEXFORGE_E_NOT_FOUND = 16,
  DEXFORGE_E_INVALID_ARGUMENT = 17,
  DEXFORGE_E_CONFLICT = 18,
  DEXFORGE_E_INTERNAL = 99
} dexforge_status;

#define DEXFORGE_FAAS_DIM 82
#define DEXFORGE_FAAS_MASK_BYTES 11
#define DEXFORGE_FAAS_WIRE_BYTES 339

typedef struct dexforge_hand dexforge_hand;
typedef struct dexforge_session dexforge_session;
typedef struct dexforge_policy dexforge_policy;
typedef struct dexforge_server dexforge_server;

DEXFORGE_API const char* dexforge_version(void);
/* Symbolic name of a status code, e.g. "ParseError". */
DEXFORGE_API const char* dexforge_status_name(dexforge_status status);
/* Message of the most recent failure on the calling thread; "" after a success. */
DEXFORGE_API const char* dexforge_last_error(void);
/* Releases a string returned through a char** out parameter. NULL is ignored. */
DEXFORGE_API void dexforge_string_free(char* text);

/* ---- hand models ---- */

DEXFORGE_API dexforge_status dexforge_hand_load(const char* path, dexforge_hand** out);
DEXFORGE_API dexforge_status dexforge_hand_parse(const char* json_text, dexforge_hand** out);
DEXFORGE_API void dexforge_hand_free(dexforge_hand* hand);
DEXFORGE_API int dexforge_hand_full_dof(const dexforge_hand* hand);
DEXFORGE_API int dexforge_hand_active_dof(const dexforge_hand* hand);
DEXFORGE_API int dexforge_hand_fingertip_count(const dexforge_hand* hand);
/* {name, side, active_dof, full_dof, mimic_count, joints_per_finger, slot_occupancy} */
DEXFORGE_API dexforge_status dexforge_hand_summary_json(const dexforge_hand* hand, char** out_json);
/* Writes full_dof values. */
DEXFORGE_API dexforge_status dexforge_hand_rest_pose(const dexforge_hand* hand, double* q_out, size_t capacity);

/* Poses are (x, y, z, roll, pitch, yaw); NULL means identity. `q` holds full_dof values and
   mimic joints are recomputed. Writes 3 * fingertip_count values. */
DEXFORGE_API dexforge_status dexforge_forward_kinematics(const dexforge_hand* hand, const double* q, size_t q_len,
                                                         const double world_xyz_rpy[6], const double offset_xyz_rpy[6],
                                                         double* fingertips_out, size_t capacity);

/* ---- retargeting ---- */

/* Solves every frame of a recording file with the profile's offset (identity when
   `profile_path` is NULL) and writes the per-frame results as JSON to `out_path`.
   `ik_json` overrides solver settings and may be NULL. `summary_json` (may be NULL) receives
   {frames, convergence_rate, flagged, mean_rms}. */
DEXFORGE_API dexforge_status dexforge_retarget_recording(const dexforge_hand* hand, const char* recording_path,
                                                         const char* profile_path, const char* ik_json,
                                                         const char* out_path, char** summary_json);

/* Writes an oracle recording generated by forward kinematics. `spec_json` may be NULL;
   keys: frames, period, amplitude, phase, seed, scene_points, true_offset[6]. */
DEXFORGE_API dexforge_status dexforge_synthetic_recording(const dexforge_hand* hand, const char* spec_json,
                                                          const char* out_path);

/* ---- FAAS action vectors ---- */

/* `q` holds full_dof or active_dof values. `wrist_xyz_rpy` may be NULL for identity.
   Writes 82 values and the 11-byte LSB-first mask. */
DEXFORGE_API dexforge_status dexforge_faas_encode(const dexforge_hand* hand, const double wrist_xyz_rpy[6],
                                                  const double* q, size_t q_len, double values_out[82],
                                                  uint8_t mask_out[11]);
/* Writes full_dof joint values and, when wrist_out is not NULL, the wrist as xyz-rpy.
   `wrist_present` (may be NULL) is set to 1 when the hand's wrist block is populated. */
DEXFORGE_API dexforge_status dexforge_faas_decode(const dexforge_hand* hand, const double values[82],
                                                  const uint8_t mask[11], double* q_out, size_t capacity,
                                                  double wrist_out[6], int* wrist_present);
DEXFORGE_API dexforge_status dexforge_faas_to_bytes(const double values[82], const uint8_t mask[11],
                                                    uint8_t out[339]);
DEXFORGE_API dexforge_status dexforge_faas_from_bytes(const uint8_t* data, size_t size, double values_out[82],
                                                      uint8_t mask_out[11]);

/* JSON forms. A state is {"q": [...], "wrist": {"xyz": [3], "rpy": [3]}?}; a FAAS vector is
   {"values": [82], "mask": [82 of 0/1]}. Decoding adds "defaulted" and "clamped" joint lists. */
DEXFORGE_API dexforge_status dexforge_faas_encode_json(const dexforge_hand* hand, const char* state_json,
                                                       char** out_json);
DEXFORGE_API dexforge_status dexforge_faas_decode_json(const dexforge_hand* hand, const char* faas_json,
                                                       char** out_json);
/* Encodes a state on `source` and decodes it on `target`:
   {"faas", "state", "shared_slots", "defaulted", "clamped"}. */
DEXFORGE_API dexforge_status dexforge_faas_transfer_json(const dexforge_hand* source, const dexforge_hand* target,
                                                         const char* state_json, char** out_json);

/* ---- point clouds ----
   A frame is three files: <prefix>.color.ppm, <prefix>.depth.pgm, <prefix>.intrinsics.json.
   Masks are 8-bit PGM with 255 marking hand pixels. Clouds use the DXPC binary format. */

DEXFORGE_API dexforge_status dexforge_pointcloud_unproject(const char* frame_prefix, const char* mask_path,
                                                           const char* cloud_out, size_t* point_count);
DEXFORGE_API dexforge_status dexforge_pointcloud_reproject(const char* cloud_path, const char* intrinsics_path,
                                                           const char* frame_prefix_out);
/* Removes masked hand pixels, attaches the robot hand surface for `state_json`
   ({"q", "hand_pose", "offset"?, "density"?, "seed"?}, poses in camera frame), and reprojects.
   Writes the composed cloud when `cloud_out` is not NULL. */
DEXFORGE_API dexforge_status dexforge_pointcloud_attach(const dexforge_hand* hand, const char* frame_prefix,
                                                        const char* mask_path, const char* state_json,
                                                        const char* frame_prefix_out, const char* cloud_out,
                                                        size_t* point_count);

/* ---- flow-matching policy ---- */

/* Trains the synthetic reaching task. `config_json` may be NULL; keys: train, val, horizon,
   hidden[], epochs, batch_size, lr, weight_decay, max_norm, seed, net_seed, euler_delta, data_seed.
   Writes a checkpoint and the "epoch,loss" curve when the paths are not NULL. `report_json`
   receives {initial_val_loss, final_val_loss, ratio, epochs, steps, seconds}. */
DEXFORGE_API dexforge_status dexforge_train_toy(const char* config_json, const char* checkpoint_out,
                                                const char* curve_csv_out, char** report_json);
DEXFORGE_API dexforge_status dexforge_policy_load(const char* checkpoint_path, dexforge_policy** out);
DEXFORGE_API void dexforge_policy_free(dexforge_policy* policy);
DEXFORGE_API int dexforge_policy_action_dim(const dexforge_policy* policy);
DEXFORGE_API int dexforge_policy_obs_dim(const dexforge_policy* policy);
/* Euler-integrates from seeded Gaussian noise; writes action_dim values. */
DEXFORGE_API dexforge_status dexforge_policy_sample(const dexforge_policy* policy, const double* obs, size_t obs_len,
                                                    double delta, uint64_t seed, double* action_out, size_t capacity);

/* ---- datasets ---- */

/* Retargets a recording and writes a trajectory shard directory. `config_json` may be NULL;
   keys: id, source ("human" | "robot"), target_fps, instruction, ik{}. */
DEXFORGE_API dexforge_status dexforge_dataset_pack(const dexforge_hand* hand, const char* recording_path,
                                                   const char* profile_path, const char* config_json,
                                                   const char* shard_out, char** summary_json);
DEXFORGE_API dexforge_status dexforge_dataset_stats(const char* const* shard_dirs, size_t count, char** out_json);
/* `spec_json` keys: human_weight, robot_weight, human_count, robot_count (default: all
   shards), seed, batch_size, batches. Output lists the
   drawn batches and the per-source fractions. */
DEXFORGE_API dexforge_status dexforge_dataset_mix_preview(const char* const* human_shards, size_t human_count,
                                                          const char* const* robot_shards, size_t robot_count,
                                                          const char* spec_json, char** out_json);

/* ---- interactive calibration sessions ---- */

/* `profile_path` and `ik_json` may be NULL. */
DEXFORGE_API dexforge_status dexforge_session_open(const char* recording_path, const char* hand_path,
                                                   const char* profile_path, const char* ik_json,
                                                   dexforge_session** out);
DEXFORGE_API void dexforge_session_free(dexforge_session* session);
DEXFORGE_API dexforge_status dexforge_session_set_offset(dexforge_session* session, const double offset_xyz_rpy[6],
                                                         double* rms_out, int* converged_out);
DEXFORGE_API dexforge_status dexforge_session_step_frame(dexforge_session* session, int delta, int* frame_out);
DEXFORGE_API dexforge_status dexforge_session_solve_all(dexforge_session* session, double* convergence_rate_out);
DEXFORGE_API dexforge_status dexforge_session_save_profile(dexforge_session* session, const char* path);
/* Same payloads as GET /session/{id}/state and /log. */
DEXFORGE_API dexforge_status dexforge_session_state_json(const dexforge_session* session, char** out_json);
DEXFORGE_API dexforge_status dexforge_session_log_json(const dexforge_session* session, char** out_json);

/* ---- HTTP service ---- */

DEXFORGE_API dexforge_status dexforge_server_create(dexforge_server** out);
DEXFORGE_API void dexforge_server_free(dexforge_server* server);
/* Binds 127.0.0.1:port; port 0 picks a free port, reported through bound_port. */
DEXFORGE_API dexforge_status dexforge_server_bind(dexforge_server* server, int port, int* bound_port);
/* Blocks until dexforge_server_stop is called from another thread. */
DEXFORGE_API dexforge_status dexforge_server_listen(dexforge_server* server);
DEXFORGE_API void dexforge_server_stop(dexforge_server* server);

#ifdef __cplusplus
}
#endif

#endif
