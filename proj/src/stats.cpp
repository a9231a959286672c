#include "evoflow/stats.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "evoflow/errors.hpp"

namespace evoflow {

std::vector<GainSample> extract_gains(const EvolutionLog& log) {
    std::vector<GainSample> out;
    for (std::size_t i = 1; i < log.iterations.size(); ++i) {
        const auto& rec = log.iterations[i];
        if (rec.iteration < 1 || !rec.verdict)
            continue;
        out.push_back({log.task_id, log.agent_model, rec.iteration,
                       rec.verdict->overall - log.iterations[i - 1].incumbent_overall});
    }
    return out;
}

double mean_of(std::span<const double> xs) {
    if (xs.empty())
        return 0.0;
    double s = 0.0;
    for (double x : xs)
        s += x;
    return s / static_cast<double>(xs.size());
}

double sample_sd(std::span<const double> xs) {
    if (xs.size() < 2)
        return 0.0;
    // Identical samples have no spread; the rounded mean would leave a residue.
    if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); }))
        return 0.0;
    double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs)
        ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

namespace {

// Linear interpolation between order statistics.
double quantile(const std::vector<double>& sorted, double q) {
    if (sorted.empty())
        return 0.0;
    double pos = q * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

} // namespace

std::pair<double, double> bootstrap_ci(std::span<const double> xs, std::uint64_t seed, int resamples, double level) {
    if (xs.empty() || resamples < 1)
        return {0.0, 0.0};
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
    std::vector<double> means(static_cast<std::size_t>(resamples));
    for (auto& m : means) {
        double s = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i)
            s += xs[pick(rng)];
        m = s / static_cast<double>(xs.size());
    }
    std::sort(means.begin(), means.end());
    double alpha = (1.0 - level) / 2.0;
    return {quantile(means, alpha), quantile(means, 1.0 - alpha)};
}

PermutationResult sign_flip_test(std::span<const double> xs, std::uint64_t seed, int permutations) {
    PermutationResult r;
    if (xs.empty() || permutations < 1)
        return r;
    double observed = mean_of(xs);
    // Relative slack so that a flip pattern reproducing the observed sum
    // counts as a tie despite rounding.
    double slack = 1e-12 * std::max(1.0, std::abs(observed));
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::size_t two = 0, one = 0;
    for (int p = 0; p < permutations; ++p) {
        double s = 0.0;
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i % 64 == 0)
                bits = rng();
            s += (bits & 1) ? xs[i] : -xs[i];
            bits >>= 1;
        }
        double m = s / static_cast<double>(xs.size());
        if (std::abs(m) >= std::abs(observed) - slack)
            ++two;
        if (m >= observed - slack)
            ++one;
    }
    double denom = 1.0 + permutations;
    r.p_two_sided = (1.0 + static_cast<double>(two)) / denom;
    r.p_one_sided = (1.0 + static_cast<double>(one)) / denom;
    return r;
}

GainStats compute_gain_stats(std::span<const GainSample> samples, const std::string& group, std::uint64_t seed,
                             int resamples, int permutations) {
    if (samples.empty())
        throw ConfigError("no gain samples: the logs contain no judged refinement iterations");
    GainStats st;
    st.group = group;
    st.seed = seed;
    st.resamples = resamples;
    st.permutations = permutations;

    std::vector<double> gains;
    std::map<int, std::vector<double>> by_iteration;
    for (const auto& s : samples) {
        gains.push_back(s.gain);
        by_iteration[s.iteration].push_back(s.gain);
    }
    st.n = gains.size();
    st.mean = mean_of(gains);
    st.sd = sample_sd(gains);
    st.sem = st.sd / std::sqrt(static_cast<double>(st.n));
    if (st.sd > 0.0) {
        st.cohens_d = st.mean / st.sd;
    } else {
        st.d_degenerate = true;
        st.cohens_d = st.mean > 0.0   ? std::numeric_limits<double>::infinity()
                      : st.mean < 0.0 ? -std::numeric_limits<double>::infinity()
                                      : 0.0;
    }
    std::tie(st.ci_lower, st.ci_upper) = bootstrap_ci(gains, seed, resamples);
    PermutationResult pr = sign_flip_test(gains, seed, permutations);
    st.p_value = pr.p_two_sided;
    st.p_one_sided = pr.p_one_sided;

    for (const auto& [it, xs] : by_iteration) {
        IterationStats is;
        is.iteration = it;
        is.n = xs.size();
        is.mean = mean_of(xs);
        is.sem = sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
        st.per_iteration.push_back(is);
    }
    return st;
}

std::string render_stats(const std::vector<GainStats>& groups) {
    std::ostringstream os;
    os << std::setprecision(6) << std::fixed;
    if (!groups.empty())
        os << "# gain = candidate overall at n - incumbent overall at n-1\n"
           << "# CI: percentile bootstrap of the mean, " << groups.front().resamples << " resamples, seed "
           << groups.front().seed << "\n"
           << "# p: sign-flip permutation test, " << groups.front().permutations
           << " permutations, two-sided on |mean| (one-sided p for mean > 0 also shown)\n"
           << "# d: mean / sample sd; inf marks zero variance\n";
    for (const auto& g : groups) {
        os << "\n[" << g.group << "]\n";
        os << "iteration\tn\tmean\tsem\n";
        for (const auto& it : g.per_iteration)
            os << it.iteration << "\t" << it.n << "\t" << it.mean << "\t" << it.sem << "\n";
        os << "overall\t" << g.n << "\t" << g.mean << "\t" << g.sem << "\n";
        os << "ci95\t" << g.ci_lower << "\t" << g.ci_upper << "\n";
        os << "cohens_d\t";
        if (std::isinf(g.cohens_d))
            os << (g.cohens_d > 0 ? "inf" : "-inf");
        else
            os << g.cohens_d;
        os << (g.d_degenerate ? "\t(zero variance)" : "") << "\n";
        os << "p_value\t" << g.p_value << "\n";
        os << "p_one_sided\t" << g.p_one_sided << "\n";
    }
    return os.str();
}

} // namespace evoflow
