#ifndef MNMT_H
#define MNMT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MnmtStatus {
  MNMT_STATUS_OK = 0,
  MNMT_STATUS_NULL_POINTER = 1,
  MNMT_STATUS_INVALID_UTF8 = 2,
  MNMT_STATUS_INVALID_ARGUMENT = 3,
  MNMT_STATUS_UNKNOWN_LANGUAGE = 4,
  MNMT_STATUS_IO = 5,
  MNMT_STATUS_FORMAT = 6,
  MNMT_STATUS_UNSUPPORTED = 7,
  MNMT_STATUS_FAILED = 8,
  MNMT_STATUS_PANIC = 9,
} MnmtStatus;

// Outcome of the per-pair corpus filter.
typedef enum MnmtFilterVerdict {
  MNMT_FILTER_VERDICT_KEEP = 0,
  MNMT_FILTER_VERDICT_EMPTY_SIDE = 1,
  MNMT_FILTER_VERDICT_LENGTH_BOUNDS = 2,
  MNMT_FILTER_VERDICT_LENGTH_RATIO = 3,
  MNMT_FILTER_VERDICT_SCRIPT_MISMATCH = 4,
  MNMT_FILTER_VERDICT_DUPLICATE = 5,
} MnmtFilterVerdict;

// A loaded BPE model.
typedef struct MnmtBpe MnmtBpe;

// A checkpoint together with its BPE model.
typedef struct MnmtTranslator MnmtTranslator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *mnmt_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void mnmt_string_free(char *s);

// Releases an id array returned by [`mnmt_bpe_encode`]. Null is ignored.
//
// # Safety
// `ids` and `len` must be exactly as returned by this library.
void mnmt_ids_free(uint32_t *ids, size_t len);

// Corpus BLEU (0 to 100) of `n` hypotheses against `n` references.
//
// # Safety
// `hyps` and `refs` must point to `n` valid NUL-terminated strings each.
enum MnmtStatus mnmt_bleu_corpus(const char *const *hyps,
                                 const char *const *refs,
                                 size_t n,
                                 size_t max_n,
                                 double *out_score);

// Loads `PREFIX.merges` and `PREFIX.vocab`.
//
// # Safety
// `prefix` must be a valid string and `out` writable.
enum MnmtStatus mnmt_bpe_load(const char *prefix, struct MnmtBpe **out);

// # Safety
// `bpe` must come from [`mnmt_bpe_load`] and not have been freed.
void mnmt_bpe_free(struct MnmtBpe *bpe);

// Segments `text` into subword ids (no language tag, BOS or EOS).
//
// # Safety
// Pointers must be valid; the result is freed with [`mnmt_ids_free`].
enum MnmtStatus mnmt_bpe_encode(const struct MnmtBpe *bpe,
                                const char *input,
                                uint32_t **out_ids,
                                size_t *out_len);

// Joins subword ids back into text; special ids are skipped.
//
// # Safety
// `ids` must point to `len` values; the result is freed with
// [`mnmt_string_free`].
enum MnmtStatus mnmt_bpe_decode(const struct MnmtBpe *bpe,
                                const uint32_t *ids,
                                size_t len,
                                char **out);

// Best transliteration of `input` from `from`'s script into `to`'s.
//
// # Safety
// Pointers must be valid; the result is freed with [`mnmt_string_free`].
enum MnmtStatus mnmt_transliterate(const char *input, const char *from, const char *to, char **out);

// Applies the per-pair filter rules with default settings.
//
// # Safety
// Pointers must be valid.
enum MnmtStatus mnmt_filter_pair(const char *source,
                                 const char *target,
                                 const char *source_lang,
                                 const char *target_lang,
                                 enum MnmtFilterVerdict *out_verdict);

// Loads a checkpoint and the BPE model it was trained with.
//
// # Safety
// Pointers must be valid; the handle is freed with
// [`mnmt_translator_free`].
enum MnmtStatus mnmt_translator_load(const char *checkpoint,
                                     const char *bpe_prefix,
                                     struct MnmtTranslator **out);

// # Safety
// `t` must come from [`mnmt_translator_load`] and not have been freed.
void mnmt_translator_free(struct MnmtTranslator *t);

// Translates one sentence into `target_lang` with the given beam width.
//
// # Safety
// Pointers must be valid; the result is freed with [`mnmt_string_free`].
enum MnmtStatus mnmt_translator_translate(const struct MnmtTranslator *t,
                                          const char *input,
                                          const char *target_lang,
                                          size_t beam_size,
                                          char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MNMT_H */
