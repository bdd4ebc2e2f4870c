#ifndef SEPCROSS_H
#define SEPCROSS_H

#include <stddef.h>

#define SEP_OK 0

/*
 A required pointer argument was null.
 */
#define SEP_NULL_POINTER 100

/*
 An argument was out of range (unknown enum value, bad length).
 */
#define SEP_BAD_ARGUMENT 101

/*
 The library panicked; the handle involved should be discarded.
 */
#define SEP_PANIC 102

#define SEP_DUFFING 0

#define SEP_PENDULUM 1

#define SEP_FRICTION 0

#define SEP_FORCED_FRICTION 1

#define SEP_TILTED_FRICTION 2

#define SEP_SLOW_DRIVE 3

#define SEP_B1 1

#define SEP_B2 2

#define SEP_B3 3

/*
 Tabulated period, frequency and action on one slow point.
 */
typedef struct SepChart SepChart;

/*
 Unperturbed Hamiltonian together with a perturbation.
 */
typedef struct SepSystem SepSystem;

/*
 Perturbation parameters; unused fields are ignored by a preset.
 */
typedef struct {
  double gamma;
  double a;
  double c;
  double rate;
} SepParams;

typedef struct {
  double period;
  double omega;
  double action;
} SepOrbit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copy the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length, 0 when there is none.

 # Safety
 `buf` must point to `len` writable bytes, or be null when `len` is 0.
 */
size_t sep_last_error(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *sep_version(void);

/*
 Create a system. `hamiltonian` is `SEP_DUFFING` or `SEP_PENDULUM`,
 `preset` one of the `SEP_*` perturbation constants; `params` may be null
 for defaults.

 # Safety
 `out` must be a valid pointer; `params` null or valid.
 */
int sep_system_new(int hamiltonian, int preset, const SepParams *params, SepSystem **out);

/*
 # Safety
 `sys` must come from `sep_system_new` and not be used afterwards.
 */
void sep_system_free(SepSystem *sys);

/*
 Number of slow variables.

 # Safety
 `sys` must be a valid handle.
 */
size_t sep_system_z_dim(const SepSystem *sys);

/*
 Period, frequency and action of the closed orbit at energy offset `h`.

 # Safety
 `sys` valid, `z` points to `z_len` values, `out` valid.
 */
int sep_orbit(const SepSystem *sys,
              int domain_id,
              double h,
              const double *z,
              size_t z_len,
              SepOrbit *out);

/*
 Separatrix integrals `theta[0..3]` at `z` and the capture probabilities
 `prob[0..2]` into the two loops. `prob` may be null.

 # Safety
 `sys` valid, `z` points to `z_len` values, `theta` to 3 and `prob` to 2 writable values.
 */
int sep_theta(const SepSystem *sys,
              const double *z,
              size_t z_len,
              double eps,
              size_t lambda_nodes,
              double *theta_out,
              double *prob);

/*
 Tabulate the three domains on `n_h` log-spaced energy magnitudes in
 `[h_min, h_max]` at the slow point `z`.

 # Safety
 `sys` valid, `z` points to `z_len` values, `out` valid.
 */
int sep_chart_new(const SepSystem *sys,
                  const double *z,
                  size_t z_len,
                  double h_min,
                  double h_max,
                  size_t n_h,
                  SepChart **out);

/*
 # Safety
 `chart` must come from `sep_chart_new` and not be used afterwards.
 */
void sep_chart_free(SepChart *chart);

/*
 Interpolated orbit scalars at energy offset `h`.

 # Safety
 `chart` and `out` valid.
 */
int sep_chart_eval(const SepChart *chart, int domain_id, double h, SepOrbit *out);

/*
 Energy offset in `domain` where the frequency equals `omega`.

 # Safety
 `chart` and `h_out` valid.
 */
int sep_chart_h_for_omega(const SepChart *chart, int domain_id, double omega, double *h_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEPCROSS_H */
