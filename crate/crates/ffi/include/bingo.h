#ifndef BINGO_H
#define BINGO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BingoStatus {
  BINGO_STATUS_OK = 0,
  BINGO_STATUS_NULL_ARGUMENT = 1,
  BINGO_STATUS_INVALID_UTF8 = 2,
  BINGO_STATUS_TOKENIZE = 3,
  BINGO_STATUS_PARSE = 4,
  BINGO_STATUS_PATCH = 5,
  BINGO_STATUS_MODEL = 6,
  BINGO_STATUS_OUT_OF_RANGE = 7,
  BINGO_STATUS_PANIC = 8,
} BingoStatus;

// Trained classifier weights.
typedef struct BingoModel BingoModel;

// Parsed ASM-TEXT program.
typedef struct BingoProgram BingoProgram;

// Twin graphs produced by one extraction.
typedef struct BingoTwinList BingoTwinList;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a success.
// The pointer stays valid until the next `bingo_*` call on this thread.
const char *bingo_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from a `bingo_*` out-parameter and not be freed twice.
void bingo_string_free(char *s);

// Tokenizes one instruction. `*out_json` receives a JSON array of
// `[text, kind]` pairs.
//
// # Safety
// String arguments must be null or NUL-terminated; `out_json` must be writable.
enum BingoStatus bingo_tokenize(const char *mnemonic, const char *operands, char **out_json);

// Parses ASM-TEXT into a program handle.
//
// # Safety
// `text` must be null or NUL-terminated; `out` must be writable.
enum BingoStatus bingo_program_parse(const char *text, struct BingoProgram **out);

// # Safety
// `p` must be null or a live handle from [`bingo_program_parse`].
void bingo_program_free(struct BingoProgram *p);

// # Safety
// `p` must be a live program handle; `out` must be writable.
enum BingoStatus bingo_program_function_count(const struct BingoProgram *p, size_t *out);

// Locates patch blocks by fingerprint diff and builds one twin graph per
// touched function. An identical pair yields an empty list.
//
// # Safety
// `pre` and `post` must be live program handles; `out` must be writable.
enum BingoStatus bingo_extract(const struct BingoProgram *pre,
                               const struct BingoProgram *post,
                               const char *commit_id,
                               size_t slice_stride,
                               struct BingoTwinList **out);

// # Safety
// `l` must be null or a live handle from [`bingo_extract`].
void bingo_twin_list_free(struct BingoTwinList *l);

// # Safety
// `l` must be a live twin list; `out` must be writable.
enum BingoStatus bingo_twin_list_len(const struct BingoTwinList *l, size_t *out);

// Serializes twin `index` in the twin-graph JSON format.
//
// # Safety
// `l` must be a live twin list; `out_json` must be writable.
enum BingoStatus bingo_twin_list_to_json(const struct BingoTwinList *l,
                                         size_t index,
                                         char **out_json);

// Loads a classifier checkpoint written by `bingo train`.
//
// # Safety
// `path` must be null or NUL-terminated; `out` must be writable.
enum BingoStatus bingo_model_load(const char *path, struct BingoModel **out);

// # Safety
// `m` must be null or a live handle from [`bingo_model_load`].
void bingo_model_free(struct BingoModel *m);

// Eval-mode probability that twin `index` is a security patch. Nodes are
// embedded with the hashed embedder, so the model must have been trained
// with it.
//
// # Safety
// `m` and `l` must be live handles; `out_p_security` must be writable.
enum BingoStatus bingo_model_predict(const struct BingoModel *m,
                                     const struct BingoTwinList *l,
                                     size_t index,
                                     double *out_p_security);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BINGO_H */
