/*
 * textseg — handwritten/printed text segmentation engine.
 *
 * C interface over the C++ core: opaque handles, status codes, and a
 * thread-local error message. Pipeline commands take one JSON run
 * configuration (see README for the schema) and communicate through files,
 * so they compose across processes.
 */
#ifndef TEXTSEG_H
#define TEXTSEG_H

#include <stdint.h>

#if defined(_WIN32)
#define TEXTSEG_API __declspec(dllexport)
#else
#define TEXTSEG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ts_status {
    TS_OK = 0,
    TS_ERROR = 1,       /* check failure or internal error; see ts_last_error() */
    TS_USAGE_ERROR = 2  /* bad arguments, configuration, or missing artifacts */
} ts_status;

TEXTSEG_API const char* ts_version(void);

/* Message for the most recent failure on this thread; empty string if none. */
TEXTSEG_API const char* ts_last_error(void);

/* Pipeline commands. config_json may be NULL or "" for all defaults. */
TEXTSEG_API ts_status ts_synth(const char* config_json);
TEXTSEG_API ts_status ts_train(const char* config_json);
TEXTSEG_API ts_status ts_infer(const char* config_json);
TEXTSEG_API ts_status ts_postprocess(const char* config_json);
TEXTSEG_API ts_status ts_eval(const char* config_json);

/* Finite-difference gradient suite. Prints one line per check and returns
 * TS_OK only if every check passes. inject_fault != 0 corrupts one analytic
 * gradient on purpose (failure-path fixture). */
TEXTSEG_API ts_status ts_gradcheck(int inject_fault);

/* In-process model handle. model_json selects the architecture, e.g.
 * {"arch":"mfm","classes":4,"ffp_stages":4,"ffp_channels":64,
 *  "ssp_depth":4,"ssp_base_channels":16,"ssp_dec_channels":12} */
typedef struct ts_model ts_model;

TEXTSEG_API ts_model* ts_model_create(const char* model_json, uint64_t seed);
TEXTSEG_API ts_model* ts_model_open(const char* model_json, const char* checkpoint_path);
TEXTSEG_API void ts_model_free(ts_model* model);

TEXTSEG_API int64_t ts_model_parameter_count(const ts_model* model);
TEXTSEG_API int ts_model_classes(const ts_model* model);
TEXTSEG_API ts_status ts_model_save(const ts_model* model, const char* checkpoint_path);

/* Segments one grayscale image (height*width bytes, row-major). probs_out
 * receives classes*height*width floats, planar per class, each pixel a
 * probability simplex. Spatial extents must be divisible by 2^ssp_depth for
 * architectures with an SSP branch. */
TEXTSEG_API ts_status ts_model_predict(ts_model* model, const uint8_t* gray, int height, int width,
                                       float* probs_out);

#ifdef __cplusplus
}
#endif

#endif /* TEXTSEG_H */
