#ifndef ABTRACK_H
#define ABTRACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of fallible calls.
typedef enum AbtStatus {
  ABT_STATUS_OK = 0,
  ABT_STATUS_NULL_POINTER = 1,
  ABT_STATUS_INVALID_ARGUMENT = 2,
  ABT_STATUS_NOT_STRONGLY_CONNECTED = 3,
  ABT_STATUS_DIVERGED = 4,
  ABT_STATUS_CERTIFICATE_FAILED = 5,
  ABT_STATUS_IO = 6,
  ABT_STATUS_PARSE = 7,
  ABT_STATUS_NOT_CONVERGED = 8,
  ABT_STATUS_BUFFER_TOO_SMALL = 9,
  ABT_STATUS_PANIC = 10,
} AbtStatus;

// Convergence certificate for one graph and problem.
typedef struct AbtCert AbtCert;

// Directed graph with self-loops.
typedef struct AbtGraph AbtGraph;

// Local objectives of all agents plus their common minimizer.
typedef struct AbtProblem AbtProblem;

// A running instance of the tracking method.
typedef struct AbtSimulation AbtSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static name of a status code.
const char *abt_status_name(enum AbtStatus status);

// Copies the last error message of this thread into `buf` as a
// NUL-terminated string, truncating if needed. Returns the full message
// length without the terminator. `buf` may be null when `len` is 0.
size_t abt_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *abt_version(void);

// Builds a graph from `len` directed edges `src[e] -> dst[e]`. Self-loops
// are added automatically.
enum AbtStatus abt_graph_from_edges(size_t n,
                                    const size_t *src,
                                    const size_t *dst,
                                    size_t len,
                                    struct AbtGraph **out);

// Seeded strongly connected graph: a random Hamiltonian cycle plus
// `extra_edges` random edges.
enum AbtStatus abt_graph_random(size_t n, size_t extra_edges, uint64_t seed, struct AbtGraph **out);

// Loads an edge-list file.
enum AbtStatus abt_graph_load(const char *path, struct AbtGraph **out);

// Number of nodes, 0 for a null handle.
size_t abt_graph_n(const struct AbtGraph *graph);

// Number of edges including self-loops, 0 for a null handle.
size_t abt_graph_num_edges(const struct AbtGraph *graph);

// 1 if strongly connected, 0 if not or if the handle is null.
int32_t abt_graph_is_strongly_connected(const struct AbtGraph *graph);

void abt_graph_free(struct AbtGraph *graph);

// Random strongly convex quadratics, one per agent.
enum AbtStatus abt_problem_quadratic_random(size_t n,
                                            size_t dim,
                                            uint64_t seed,
                                            struct AbtProblem **out);

// Regularized logistic regression on random data. The variable has
// `features + 1` entries, the last one being the bias.
enum AbtStatus abt_problem_logistic_random(size_t n,
                                           size_t features,
                                           size_t samples_per_agent,
                                           double xi,
                                           bool regularize_bias,
                                           uint64_t seed,
                                           struct AbtProblem **out);

size_t abt_problem_n_agents(const struct AbtProblem *problem);

size_t abt_problem_dim(const struct AbtProblem *problem);

// Copies the minimizer of the average objective into `buf[0..dim]`.
enum AbtStatus abt_problem_optimum(const struct AbtProblem *problem, double *buf, size_t len);

void abt_problem_free(struct AbtProblem *problem);

// Builds the convergence certificate and evaluates it at `eta_max / 2`.
enum AbtStatus abt_cert_new(const struct AbtGraph *graph,
                            const struct AbtProblem *problem,
                            struct AbtCert **out);

// Largest certified step size.
enum AbtStatus abt_cert_eta_max(const struct AbtCert *cert, double *out);

// Contraction factors of the two mixing matrices in their frame norms.
enum AbtStatus abt_cert_sigmas(const struct AbtCert *cert, double *sigma_a, double *sigma_b);

// Copies the nine coupling constants into `buf[0..9]`.
enum AbtStatus abt_cert_constants(const struct AbtCert *cert, double *buf, size_t len);

// Spectral radius of the 3x3 gain matrix at step `eta`.
enum AbtStatus abt_cert_spectral_radius(const struct AbtCert *cert, double eta, double *out);

void abt_cert_free(struct AbtCert *cert);

// Starts the tracking method on `graph` and `problem` with step `eta`.
// `x0` holds `n * dim` entries in agent-major order; null starts at zero.
enum AbtStatus abt_sim_new(const struct AbtGraph *graph,
                           const struct AbtProblem *problem,
                           double eta,
                           const double *x0,
                           struct AbtSimulation **out);

// Advances `steps` iterations. On divergence the state stays at the last
// finite iterate.
enum AbtStatus abt_sim_step(struct AbtSimulation *sim, size_t steps);

// Iterations taken so far, 0 for a null handle.
size_t abt_sim_iteration(const struct AbtSimulation *sim);

// Average distance of the agents to the minimizer.
enum AbtStatus abt_sim_residual(const struct AbtSimulation *sim, double *out);

// Largest distance of an agent to the agents' mean.
enum AbtStatus abt_sim_consensus_error(const struct AbtSimulation *sim, double *out);

// Deviation of the tracker sum from the gradient sum.
enum AbtStatus abt_sim_conservation_gap(const struct AbtSimulation *sim, double *out);

// Copies the iterates into `buf` in agent-major order (`n * dim` entries).
enum AbtStatus abt_sim_iterates(const struct AbtSimulation *sim, double *buf, size_t len);

void abt_sim_free(struct AbtSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABTRACK_H */
