#pragma once
/// Reward-gain statistics over evolution logs.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evoflow/orchestrator.hpp"

namespace evoflow {

struct GainSample {
    std::string run_id;
    std::string model;
    int iteration = 1;
    double gain = 0.0; ///< candidate overall at n minus incumbent overall at n-1
};

/// One sample per refinement iteration that produced a judged candidate.
/// Iterations whose mutation proposal was exhausted contribute nothing.
std::vector<GainSample> extract_gains(const EvolutionLog& log);

struct IterationStats {
    int iteration = 0;
    std::size_t n = 0;
    double mean = 0.0;
    double sem = 0.0;
};

struct GainStats {
    std::string group; ///< "pooled" or a model name
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;  ///< sample standard deviation (n-1); 0 when n < 2
    double sem = 0.0;
    /// mean / sd. With sd == 0 this is +inf, -inf or 0 following the sign of
    /// the mean, and `d_degenerate` is set.
    double cohens_d = 0.0;
    bool d_degenerate = false;
    double ci_lower = 0.0; ///< 2.5th percentile of bootstrap means
    double ci_upper = 0.0; ///< 97.5th percentile
    /// Sign-flip permutation p-values, (1 + hits) / (1 + permutations).
    /// Two-sided uses |mean|; one-sided counts flipped means >= observed.
    double p_value = 1.0;
    double p_one_sided = 1.0;
    int resamples = 10000;
    int permutations = 10000;
    std::uint64_t seed = 0;
    std::vector<IterationStats> per_iteration;
};

double mean_of(std::span<const double> xs);
/// Sample standard deviation; 0 for fewer than two values.
double sample_sd(std::span<const double> xs);

/// Percentile bootstrap of the mean. Deterministic for a given seed.
std::pair<double, double> bootstrap_ci(std::span<const double> xs, std::uint64_t seed, int resamples,
                                       double level = 0.95);

struct PermutationResult {
    double p_two_sided = 1.0;
    double p_one_sided = 1.0;
};

PermutationResult sign_flip_test(std::span<const double> xs, std::uint64_t seed, int permutations);

/// Throws ConfigError when `samples` is empty.
GainStats compute_gain_stats(std::span<const GainSample> samples, const std::string& group, std::uint64_t seed,
                             int resamples = 10000, int permutations = 10000);

/// Plain-text report with a method header and one table per group.
std::string render_stats(const std::vector<GainStats>& groups);

} // namespace evoflow
