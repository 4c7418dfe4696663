#ifndef NEGCLIP_H
#define NEGCLIP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NegclipStatus {
  NEGCLIP_STATUS_OK = 0,
  NEGCLIP_STATUS_NULL_POINTER = 1,
  NEGCLIP_STATUS_INVALID_UTF8 = 2,
  NEGCLIP_STATUS_INVALID_ARGUMENT = 3,
  NEGCLIP_STATUS_IO = 4,
  NEGCLIP_STATUS_PARSE = 5,
  NEGCLIP_STATUS_LEXICON = 6,
  NEGCLIP_STATUS_BUNDLE_NOT_FOUND = 7,
  NEGCLIP_STATUS_CHECKPOINT = 8,
  NEGCLIP_STATUS_DIM_MISMATCH = 9,
  NEGCLIP_STATUS_NOT_NORMALIZED = 10,
  NEGCLIP_STATUS_IMAGE = 11,
  NEGCLIP_STATUS_BUFFER_TOO_SMALL = 12,
  NEGCLIP_STATUS_PANIC = 13,
  NEGCLIP_STATUS_OTHER = 14,
} NegclipStatus;

// Encoder bundle handle.
typedef struct NegclipBundle NegclipBundle;

// Negation lexicon handle.
typedef struct NegclipLexicon NegclipLexicon;

// Streaming corpus scanner handle.
typedef struct NegclipScanner NegclipScanner;

// Caption- and word-level negation counts.
typedef struct NegclipStats {
  uint64_t caption_total;
  uint64_t caption_neg;
  uint64_t word_total;
  uint64_t word_neg;
  double caption_ratio;
  double word_ratio;
} NegclipStats;

// Pixel box, top-left origin.
typedef struct NegclipBox {
  uint32_t x;
  uint32_t y;
  uint32_t w;
  uint32_t h;
} NegclipBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *negclip_last_error(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must come from this library or be null.
void negclip_string_free(char *s);

// Creates a lexicon from a comma-separated term list, or the built-in
// lexicon when `terms` is null.
//
// # Safety
// `terms` must be null or a NUL-terminated string; `out` must be writable.
enum NegclipStatus negclip_lexicon_new(const char *terms, struct NegclipLexicon **out);

// # Safety
// `lexicon` must come from [`negclip_lexicon_new`] or be null.
void negclip_lexicon_free(struct NegclipLexicon *lexicon);

// Writes the number of negation tokens in `text` to `count`.
//
// # Safety
// Pointers must be valid; `text` NUL-terminated.
enum NegclipStatus negclip_contains_negation(const struct NegclipLexicon *lexicon,
                                             const char *text,
                                             size_t *count);

// Creates a scanner holding its own copy of `lexicon`.
//
// # Safety
// Pointers must be valid.
enum NegclipStatus negclip_scanner_new(const struct NegclipLexicon *lexicon,
                                       struct NegclipScanner **out);

// Counts one caption.
//
// # Safety
// Pointers must be valid; `caption` NUL-terminated.
enum NegclipStatus negclip_scanner_push(struct NegclipScanner *scanner, const char *caption);

// # Safety
// Pointers must be valid.
enum NegclipStatus negclip_scanner_stats(const struct NegclipScanner *scanner,
                                         struct NegclipStats *out);

// # Safety
// `scanner` must come from [`negclip_scanner_new`] or be null.
void negclip_scanner_free(struct NegclipScanner *scanner);

// Grows `patch` to the largest box within one own-size of itself that stays
// inside the image and disjoint from `other`.
//
// # Safety
// `out` must be writable.
enum NegclipStatus negclip_maximize_patch(struct NegclipBox patch,
                                          struct NegclipBox other,
                                          uint32_t width,
                                          uint32_t height,
                                          struct NegclipBox *out);

// Loads a bundle directory.
//
// # Safety
// `dir` must be NUL-terminated; `out` writable.
enum NegclipStatus negclip_bundle_load(const char *dir, struct NegclipBundle **out);

// # Safety
// `bundle` must come from [`negclip_bundle_load`] or be null.
void negclip_bundle_free(struct NegclipBundle *bundle);

// Embedding dimension, or 0 for a null handle.
//
// # Safety
// `bundle` must be valid or null.
size_t negclip_bundle_dim(const struct NegclipBundle *bundle);

// Architecture tag as a new string; free with [`negclip_string_free`].
//
// # Safety
// `bundle` must be valid or null.
char *negclip_bundle_architecture(const struct NegclipBundle *bundle);

// Writes the unit-norm text embedding into `out[0..len]`; `len` must equal
// the bundle dimension.
//
// # Safety
// `out` must point to `len` writable doubles.
enum NegclipStatus negclip_encode_text(const struct NegclipBundle *bundle,
                                       const char *text,
                                       double *out,
                                       size_t len);

// Writes the unit-norm embedding of the image at `path`.
//
// # Safety
// `out` must point to `len` writable doubles.
enum NegclipStatus negclip_encode_image_file(const struct NegclipBundle *bundle,
                                             const char *path,
                                             double *out,
                                             size_t len);

// Cosine similarity of two vectors of length `len`, clamped to [-1, 1].
//
// # Safety
// `a` and `b` must point to `len` readable doubles.
enum NegclipStatus negclip_similarity(const double *a, const double *b, size_t len, double *out);

// Symmetric InfoNCE over `n` row-major unit-norm pairs of width `dim`.
//
// # Safety
// `text` and `image` must point to `n * dim` readable doubles.
enum NegclipStatus negclip_info_nce(const double *text,
                                    const double *image,
                                    size_t n,
                                    size_t dim,
                                    double scale,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEGCLIP_H */
