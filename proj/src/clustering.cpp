#include "csm/clustering.hpp"

#include "csm/error.hpp"
#include "csm/rng.hpp"
#include "csm/situation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

namespace csm {

std::string_view to_string(ClusterMethod m) {
    switch (m) {
    case ClusterMethod::None: return "none";
    case ClusterMethod::XMeans: return "xmeans";
    case ClusterMethod::Em: return "em";
    case ClusterMethod::Sequence: return "sequence";
    }
    return "?";
}

std::string_view to_string(FeatureKind f) {
    switch (f) {
    case FeatureKind::Errors: return "errors";
    case FeatureKind::ErrorsTime: return "errors-time";
    case FeatureKind::EventsByZone: return "events-by-zone";
    }
    return "?";
}

std::optional<ClusterMethod> parse_cluster_method(std::string_view s) {
    if (s == "none") return ClusterMethod::None;
    if (s == "xmeans") return ClusterMethod::XMeans;
    if (s == "em") return ClusterMethod::Em;
    if (s == "sequence") return ClusterMethod::Sequence;
    return std::nullopt;
}

std::optional<FeatureKind> parse_feature_kind(std::string_view s) {
    if (s == "errors") return FeatureKind::Errors;
    if (s == "errors-time") return FeatureKind::ErrorsTime;
    if (s == "events-by-zone") return FeatureKind::EventsByZone;
    return std::nullopt;
}

double ErrorWeights::of(ErrorClass c) const {
    switch (c) {
    case ErrorClass::None: return 0.0;
    case ErrorClass::Dependency: return dependency;
    case ErrorClass::Incompatibility: return incompatibility;
    case ErrorClass::World: return world;
    case ErrorClass::Other: return other;
    }
    return 0.0;
}

void ErrorWeights::validate() const {
    const double all[] = {dependency, incompatibility, world, other};
    bool positive = false;
    for (const double w : all) {
        if (!std::isfinite(w) || w < 0.0) {
            throw ConfigError("error weights must be finite and non-negative");
        }
        positive = positive || w > 0.0;
    }
    if (!positive) {
        throw ConfigError("at least one error weight must be positive");
    }
}

FeatureVector feature_errors(const StudentLog& log, const ErrorWeights& w) {
    double sum = 0.0;
    for (const auto& e : log.events) {
        if (e.kind != EventKind::Do) {
            sum += w.of(e.error_class);
        }
    }
    return {sum};
}

FeatureVector feature_errors_time(const StudentLog& log, const ErrorWeights& w) {
    return {feature_errors(log, w)[0], log.total_time.value_or(incomplete_time_penalty)};
}

FeatureVector feature_events_by_zone(const StudentLog& log) {
    FeatureVector v(3, 0.0);
    for (const auto& e : log.events) {
        switch (classify_relevance(e)) {
        case Relevance::Correct: v[0] += 1; break;
        case Relevance::IrrelevantError: v[1] += 1; break;
        case Relevance::RelevantError: v[2] += 1; break;
        case Relevance::Ignored: break;
        }
    }
    return v;
}

FeatureVector compute_feature(FeatureKind kind, const StudentLog& log, const ErrorWeights& w) {
    switch (kind) {
    case FeatureKind::Errors: return feature_errors(log, w);
    case FeatureKind::ErrorsTime: return feature_errors_time(log, w);
    case FeatureKind::EventsByZone: return feature_events_by_zone(log);
    }
    return {};
}

std::size_t feature_dimension(FeatureKind kind) {
    switch (kind) {
    case FeatureKind::Errors: return 1;
    case FeatureKind::ErrorsTime: return 2;
    case FeatureKind::EventsByZone: return 3;
    }
    return 0;
}

Normalizer Normalizer::fit(std::span<const FeatureVector> data) {
    Normalizer n;
    if (data.empty()) {
        return n;
    }
    const std::size_t m = data.front().size();
    n.mean.assign(m, 0.0);
    n.scale.assign(m, 1.0);
    for (const auto& v : data) {
        for (std::size_t d = 0; d < m; ++d) {
            n.mean[d] += v[d];
        }
    }
    for (auto& x : n.mean) {
        x /= static_cast<double>(data.size());
    }
    for (std::size_t d = 0; d < m; ++d) {
        double ss = 0.0;
        for (const auto& v : data) {
            ss += (v[d] - n.mean[d]) * (v[d] - n.mean[d]);
        }
        const double sd = std::sqrt(ss / static_cast<double>(data.size()));
        n.scale[d] = sd > 1e-12 * (1.0 + std::abs(n.mean[d])) ? sd : 1.0;
    }
    return n;
}

FeatureVector Normalizer::apply(const FeatureVector& v) const {
    FeatureVector out(v.size());
    for (std::size_t d = 0; d < v.size(); ++d) {
        const double mu = d < mean.size() ? mean[d] : 0.0;
        const double sc = d < scale.size() ? scale[d] : 1.0;
        out[d] = (v[d] - mu) / sc;
    }
    return out;
}

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double sqdist(const FeatureVector& a, const FeatureVector& b) {
    double s = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        s += (a[d] - b[d]) * (a[d] - b[d]);
    }
    return s;
}

int nearest(std::span<const FeatureVector> centroids, const FeatureVector& x) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centroids.size(); ++j) {
        const double d = sqdist(centroids[j], x);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

FeatureVector mean_of(std::span<const FeatureVector> x, std::span<const std::size_t> idx) {
    FeatureVector m(x.front().size(), 0.0);
    for (const auto i : idx) {
        for (std::size_t d = 0; d < m.size(); ++d) {
            m[d] += x[i][d];
        }
    }
    for (auto& v : m) {
        v /= static_cast<double>(idx.size());
    }
    return m;
}

/// Lloyd iterations over the points `idx`; returns the local assignment.
/// Empty clusters keep their previous centroid.
std::vector<int> lloyd(std::span<const FeatureVector> x, std::span<const std::size_t> idx,
                       std::vector<FeatureVector>& centroids, int max_iter = 100) {
    std::vector<int> assign(idx.size(), -1);
    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const int j = nearest(centroids, x[idx[i]]);
            if (j != assign[i]) {
                assign[i] = j;
                changed = true;
            }
        }
        if (!changed && it > 0) {
            break;
        }
        std::vector<FeatureVector> sums(centroids.size(), FeatureVector(x.front().size(), 0.0));
        std::vector<std::size_t> counts(centroids.size(), 0);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto j = static_cast<std::size_t>(assign[i]);
            ++counts[j];
            for (std::size_t d = 0; d < sums[j].size(); ++d) {
                sums[j][d] += x[idx[i]][d];
            }
        }
        for (std::size_t j = 0; j < centroids.size(); ++j) {
            if (counts[j] > 0) {
                for (std::size_t d = 0; d < sums[j].size(); ++d) {
                    centroids[j][d] = sums[j][d] / static_cast<double>(counts[j]);
                }
            }
        }
    }
    return assign;
}

/// Bayesian information criterion of a hard clustering under the
/// identical spherical Gaussian model.
double bic(std::span<const FeatureVector> x, std::span<const std::size_t> idx, std::span<const FeatureVector> centroids,
           std::span<const int> assign) {
    const double r = static_cast<double>(idx.size());
    const double k = static_cast<double>(centroids.size());
    const double m = static_cast<double>(x.front().size());
    if (idx.size() <= centroids.size()) {
        return neg_inf;
    }
    std::vector<double> sizes(centroids.size(), 0.0);
    double sse = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        sizes[static_cast<std::size_t>(assign[i])] += 1.0;
        sse += sqdist(x[idx[i]], centroids[static_cast<std::size_t>(assign[i])]);
    }
    const double sigma2 = std::max(sse / (m * (r - k)), 1e-12);
    double l = 0.0;
    for (const double rn : sizes) {
        if (rn > 0) {
            l += rn * std::log(rn / r);
        }
    }
    l -= r * m / 2.0 * std::log(2.0 * std::numbers::pi * sigma2);
    l -= (r - k) * m / 2.0;
    const double p = (k - 1.0) + k * m + 1.0;
    return l - p / 2.0 * std::log(r);
}

/// Principal axis of the points by power iteration.
std::pair<FeatureVector, double> principal_axis(std::span<const FeatureVector> x, std::span<const std::size_t> idx,
                                                const FeatureVector& center, Rng& rng) {
    const std::size_t m = center.size();
    std::vector<double> cov(m * m, 0.0);
    for (const auto i : idx) {
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < m; ++b) {
                cov[a * m + b] += (x[i][a] - center[a]) * (x[i][b] - center[b]);
            }
        }
    }
    for (auto& c : cov) {
        c /= static_cast<double>(idx.size());
    }
    FeatureVector v(m);
    for (auto& c : v) {
        c = rng.normal();
    }
    double lambda = 0.0;
    for (int it = 0; it < 100; ++it) {
        FeatureVector w(m, 0.0);
        for (std::size_t a = 0; a < m; ++a) {
            for (std::size_t b = 0; b < m; ++b) {
                w[a] += cov[a * m + b] * v[b];
            }
        }
        const double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
        if (norm < 1e-300) {
            return {v, 0.0};
        }
        for (std::size_t a = 0; a < m; ++a) {
            v[a] = w[a] / norm;
        }
        lambda = norm;
    }
    return {v, lambda};
}

/// Renumbers clusters by first appearance and drops empty ones. Returns
/// old index -> new index (-1 when dropped).
std::vector<int> relabel(std::vector<int>& assignment, std::size_t k) {
    std::vector<int> map(k, -1);
    int next = 0;
    for (auto& a : assignment) {
        auto& slot = map[static_cast<std::size_t>(a)];
        if (slot < 0) {
            slot = next++;
        }
        a = slot;
    }
    return map;
}

template <class T>
std::vector<T> permute(std::vector<T> items, std::span<const int> map) {
    const int k = *std::max_element(map.begin(), map.end()) + 1;
    std::vector<T> out(static_cast<std::size_t>(std::max(k, 0)));
    for (std::size_t j = 0; j < map.size(); ++j) {
        if (map[j] >= 0) {
            out[static_cast<std::size_t>(map[j])] = std::move(items[j]);
        }
    }
    return out;
}

std::vector<FeatureVector> normalized(std::span<const FeatureVector> vectors, const Normalizer& n) {
    std::vector<FeatureVector> x;
    x.reserve(vectors.size());
    for (const auto& v : vectors) {
        x.push_back(n.apply(v));
    }
    return x;
}

} // namespace

VectorClusters xmeans(std::span<const FeatureVector> vectors, int k_max, std::uint64_t seed) {
    if (vectors.empty()) {
        throw ConfigError("xmeans needs at least one vector");
    }
    VectorClusters out;
    out.normalizer = Normalizer::fit(vectors);
    const auto x = normalized(vectors, out.normalizer);
    std::vector<std::size_t> all(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    Rng rng(seed);

    std::vector<FeatureVector> centroids{mean_of(x, all)};
    std::vector<FeatureVector> best_centroids = centroids;
    double best_bic = neg_inf;

    for (;;) {
        auto assign = lloyd(x, all, centroids);
        {
            // Drop clusters that lost every point.
            auto map = relabel(assign, centroids.size());
            std::vector<FeatureVector> kept(static_cast<std::size_t>(*std::max_element(map.begin(), map.end()) + 1));
            for (std::size_t j = 0; j < map.size(); ++j) {
                if (map[j] >= 0) {
                    kept[static_cast<std::size_t>(map[j])] = centroids[j];
                }
            }
            centroids = std::move(kept);
        }
        const double score = bic(x, all, centroids, assign);
        if (score > best_bic || best_centroids.empty()) {
            best_bic = score;
            best_centroids = centroids;
        }
        const int k = static_cast<int>(centroids.size());
        if (k >= k_max) {
            break;
        }

        struct Split {
            std::size_t cluster;
            double gain;
            std::vector<FeatureVector> children;
        };
        std::vector<Split> splits;
        for (std::size_t j = 0; j < centroids.size(); ++j) {
            std::vector<std::size_t> pts;
            for (std::size_t i = 0; i < all.size(); ++i) {
                if (assign[i] == static_cast<int>(j)) {
                    pts.push_back(i);
                }
            }
            if (pts.size() < 3) {
                continue;
            }
            const auto [axis, lambda] = principal_axis(x, pts, centroids[j], rng);
            if (lambda <= 1e-12) {
                continue;
            }
            const double offset = std::sqrt(2.0 * lambda / std::numbers::pi);
            std::vector<FeatureVector> children(2, centroids[j]);
            for (std::size_t d = 0; d < axis.size(); ++d) {
                children[0][d] += axis[d] * offset;
                children[1][d] -= axis[d] * offset;
            }
            const auto local = lloyd(x, pts, children);
            const auto in_first = std::count(local.begin(), local.end(), 0);
            if (in_first == 0 || in_first == static_cast<std::ptrdiff_t>(pts.size())) {
                continue;
            }
            const std::vector<int> parent_assign(pts.size(), 0);
            const std::vector<FeatureVector> parent{centroids[j]};
            const double gain = bic(x, pts, children, local) - bic(x, pts, parent, parent_assign);
            if (gain > 0.0) {
                splits.push_back({j, gain, std::move(children)});
            }
        }
        if (splits.empty()) {
            break;
        }
        std::stable_sort(splits.begin(), splits.end(), [](const Split& a, const Split& b) { return a.gain > b.gain; });
        splits.resize(std::min<std::size_t>(splits.size(), static_cast<std::size_t>(k_max - k)));
        std::vector<const Split*> by_cluster(centroids.size(), nullptr);
        for (const auto& s : splits) {
            by_cluster[s.cluster] = &s;
        }
        std::vector<FeatureVector> next;
        for (std::size_t j = 0; j < centroids.size(); ++j) {
            if (by_cluster[j]) {
                next.push_back(by_cluster[j]->children[0]);
                next.push_back(by_cluster[j]->children[1]);
            } else {
                next.push_back(centroids[j]);
            }
        }
        centroids = std::move(next);
    }

    centroids = best_centroids;
    out.assignment = lloyd(x, all, centroids);
    const auto map = relabel(out.assignment, centroids.size());
    out.centroids = permute(std::move(centroids), map);
    return out;
}

namespace {

struct Gmm {
    std::vector<double> weights;
    std::vector<FeatureVector> means;
    std::vector<FeatureVector> vars;
};

constexpr double variance_floor = 1e-6;

double log_gauss(const FeatureVector& x, const FeatureVector& mu, const FeatureVector& var) {
    double s = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        const double diff = x[d] - mu[d];
        s += std::log(2.0 * std::numbers::pi * var[d]) + diff * diff / var[d];
    }
    return -0.5 * s;
}

double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) {
        return m;
    }
    double s = 0.0;
    for (const double x : v) {
        s += std::exp(x - m);
    }
    return m + std::log(s);
}

/// log p(x) under the mixture; fills `resp` with responsibilities.
double gmm_point(const Gmm& g, const FeatureVector& x, std::vector<double>& resp) {
    resp.resize(g.weights.size());
    for (std::size_t c = 0; c < g.weights.size(); ++c) {
        resp[c] = g.weights[c] > 0 ? std::log(g.weights[c]) + log_gauss(x, g.means[c], g.vars[c]) : neg_inf;
    }
    const double lse = log_sum_exp(resp);
    for (auto& r : resp) {
        r = std::exp(r - lse);
    }
    return lse;
}

Gmm fit_gmm(std::span<const FeatureVector> x, int k, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = x.size();
    const std::size_t m = x.front().size();
    Gmm g;

    // k-means++ seeding.
    g.means.push_back(x[rng.below(n)]);
    std::vector<double> d2(n);
    while (g.means.size() < static_cast<std::size_t>(k)) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = sqdist(x[i], g.means[static_cast<std::size_t>(nearest(g.means, x[i]))]);
            total += d2[i];
        }
        std::size_t pick = rng.below(n);
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                u -= d2[i];
                if (u < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        g.means.push_back(x[pick]);
    }

    FeatureVector mu(m, 0.0), var(m, 0.0);
    for (const auto& p : x) {
        for (std::size_t d = 0; d < m; ++d) {
            mu[d] += p[d] / static_cast<double>(n);
        }
    }
    for (const auto& p : x) {
        for (std::size_t d = 0; d < m; ++d) {
            var[d] += (p[d] - mu[d]) * (p[d] - mu[d]) / static_cast<double>(n);
        }
    }
    for (auto& v : var) {
        v = std::max(v, variance_floor);
    }
    g.vars.assign(static_cast<std::size_t>(k), var);
    g.weights.assign(static_cast<std::size_t>(k), 1.0 / k);

    std::vector<std::vector<double>> resp(n);
    double prev = neg_inf;
    for (int it = 0; it < 200; ++it) {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ll += gmm_point(g, x[i], resp[i]);
        }
        if (it > 0 && std::abs(ll - prev) <= 1e-8 * (1.0 + std::abs(ll))) {
            break;
        }
        prev = ll;
        for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
            double nk = 0.0;
            FeatureVector mean(m, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i][c];
                for (std::size_t d = 0; d < m; ++d) {
                    mean[d] += resp[i][c] * x[i][d];
                }
            }
            g.weights[c] = nk / static_cast<double>(n);
            if (nk < 1e-10) {
                continue;
            }
            FeatureVector v(m, 0.0);
            for (std::size_t d = 0; d < m; ++d) {
                mean[d] /= nk;
            }
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t d = 0; d < m; ++d) {
                    v[d] += resp[i][c] * (x[i][d] - mean[d]) * (x[i][d] - mean[d]);
                }
            }
            for (std::size_t d = 0; d < m; ++d) {
                v[d] = std::max(v[d] / nk, variance_floor);
            }
            g.means[c] = std::move(mean);
            g.vars[c] = std::move(v);
        }
    }
    return g;
}

std::size_t distinct_count(std::span<const FeatureVector> x) {
    std::set<FeatureVector> s(x.begin(), x.end());
    return s.size();
}

} // namespace

VectorClusters em_cluster(std::span<const FeatureVector> vectors, int k_max, std::uint64_t seed) {
    if (vectors.empty()) {
        throw ConfigError("em needs at least one vector");
    }
    VectorClusters out;
    out.normalizer = Normalizer::fit(vectors);
    const auto x = normalized(vectors, out.normalizer);
    const std::size_t n = x.size();
    const std::size_t distinct = distinct_count(x);

    int best_k = 1;
    if (n >= 2 && distinct >= 2) {
        const std::size_t folds = std::min<std::size_t>(10, n);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng fold_rng(mix_seed(seed, 0));
        fold_rng.shuffle(std::span(order));
        std::vector<std::size_t> fold_of(n);
        for (std::size_t i = 0; i < n; ++i) {
            fold_of[order[i]] = i % folds;
        }

        double best_score = neg_inf;
        int worse = 0;
        std::vector<double> resp;
        for (int k = 1; k <= k_max && static_cast<std::size_t>(k) <= distinct; ++k) {
            double score = 0.0;
            for (std::size_t f = 0; f < folds; ++f) {
                std::vector<FeatureVector> train, test;
                for (std::size_t i = 0; i < n; ++i) {
                    (fold_of[i] == f ? test : train).push_back(x[i]);
                }
                const auto g = fit_gmm(train, k, mix_seed(seed, 1000 + static_cast<std::uint64_t>(k) * 16 + f));
                for (const auto& p : test) {
                    score += gmm_point(g, p, resp);
                }
            }
            if (score > best_score) {
                best_score = score;
                best_k = k;
                worse = 0;
            } else if (++worse >= 2) {
                // The held-out likelihood has stopped improving.
                break;
            }
        }
    }

    const auto g = fit_gmm(x, best_k, mix_seed(seed, 1));
    std::vector<double> resp;
    out.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        gmm_point(g, x[i], resp);
        out.assignment[i] = static_cast<int>(std::max_element(resp.begin(), resp.end()) - resp.begin());
    }
    const auto map = relabel(out.assignment, g.weights.size());
    out.mixture_weights = permute(g.weights, map);
    out.variances = permute(g.vars, map);
    // Centroids are the member means, so nearest-centroid assignment of new
    // students works the same way for every vector method.
    out.centroids.assign(out.mixture_weights.size(), FeatureVector(x.front().size(), 0.0));
    std::vector<std::size_t> counts(out.centroids.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(out.assignment[i]);
        ++counts[j];
        for (std::size_t d = 0; d < x[i].size(); ++d) {
            out.centroids[j][d] += x[i][d];
        }
    }
    for (std::size_t j = 0; j < out.centroids.size(); ++j) {
        for (auto& v : out.centroids[j]) {
            v /= static_cast<double>(counts[j]);
        }
    }
    const double wsum = std::accumulate(out.mixture_weights.begin(), out.mixture_weights.end(), 0.0);
    for (auto& w : out.mixture_weights) {
        w /= wsum;
    }
    return out;
}

std::vector<std::size_t> SequenceModel::encode(std::span<const EventRecord> events) const {
    std::vector<std::size_t> out;
    out.reserve(events.size());
    for (const auto& e : events) {
        const auto code = EventSignature::of(e).encode();
        const auto it = std::lower_bound(alphabet.begin(), alphabet.end(), code);
        out.push_back(it != alphabet.end() && *it == code ? static_cast<std::size_t>(it - alphabet.begin())
                                                          : unknown_symbol());
    }
    return out;
}

double SequenceModel::log_likelihood(std::size_t component, std::span<const std::size_t> symbols,
                                     bool complete) const {
    const auto& c = components[component];
    double ll = 0.0;
    if (symbols.empty()) {
        return complete ? std::log(c.initial[end_symbol()]) : 0.0;
    }
    ll += std::log(c.initial[symbols[0]]);
    for (std::size_t i = 1; i < symbols.size(); ++i) {
        ll += std::log(c.transition[symbols[i - 1]][symbols[i]]);
    }
    if (complete) {
        ll += std::log(c.transition[symbols.back()][end_symbol()]);
    }
    return ll;
}

namespace {

constexpr double markov_floor = 1e-6;

/// Transition counts of one sequence. Row `start_row` is the start state.
struct SparseCounts {
    std::vector<std::pair<std::uint32_t, double>> cells;  // row * cols + col
};

struct MarkovFit {
    std::vector<double> weights;
    /// Per component: (symbols + 1) rows x (symbols + 1) columns; the last
    /// row is the start distribution, the last column is end-of-log.
    std::vector<std::vector<double>> tables;
    std::vector<std::vector<double>> log_tables;
    double ll = neg_inf;
    std::vector<double> trace;
    std::vector<int> assignment;
};

struct SeqData {
    std::size_t symbols = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<SparseCounts> seqs;
};

void normalize_rows(std::vector<double>& table, const SeqData& d) {
    for (std::size_t r = 0; r < d.rows; ++r) {
        double* row = table.data() + r * d.cols;
        double sum = std::accumulate(row, row + d.cols, 0.0);
        if (sum <= 0.0) {
            std::fill(row, row + d.cols, 1.0 / static_cast<double>(d.cols));
            continue;
        }
        double total = 0.0;
        for (std::size_t c = 0; c < d.cols; ++c) {
            row[c] = std::max(row[c] / sum, markov_floor);
            total += row[c];
        }
        for (std::size_t c = 0; c < d.cols; ++c) {
            row[c] /= total;
        }
    }
}

void m_step(MarkovFit& fit, const SeqData& d, const std::vector<std::vector<double>>& resp) {
    const std::size_t k = fit.weights.size();
    const double n = static_cast<double>(d.seqs.size());
    for (std::size_t c = 0; c < k; ++c) {
        auto& table = fit.tables[c];
        std::fill(table.begin(), table.end(), 0.0);
        double nk = 0.0;
        for (std::size_t i = 0; i < d.seqs.size(); ++i) {
            const double r = resp[i][c];
            nk += r;
            if (r == 0.0) {
                continue;
            }
            for (const auto& [cell, count] : d.seqs[i].cells) {
                table[cell] += r * count;
            }
        }
        fit.weights[c] = nk / n;
        normalize_rows(table, d);
        auto& logs = fit.log_tables[c];
        logs.resize(table.size());
        for (std::size_t j = 0; j < table.size(); ++j) {
            logs[j] = std::log(table[j]);
        }
    }
}

double e_step(const MarkovFit& fit, const SeqData& d, std::vector<std::vector<double>>& resp) {
    const std::size_t k = fit.weights.size();
    double ll = 0.0;
    std::vector<double> terms(k);
    for (std::size_t i = 0; i < d.seqs.size(); ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            double t = fit.weights[c] > 0 ? std::log(fit.weights[c]) : neg_inf;
            for (const auto& [cell, count] : d.seqs[i].cells) {
                t += count * fit.log_tables[c][cell];
            }
            terms[c] = t;
        }
        const double lse = log_sum_exp(terms);
        ll += lse;
        resp[i].resize(k);
        for (std::size_t c = 0; c < k; ++c) {
            resp[i][c] = std::exp(terms[c] - lse);
        }
    }
    return ll;
}

double overlap_distance(const SparseCounts& a, const SparseCounts& b) {
    // 1 - Jaccard similarity of the sets of transitions used.
    std::size_t common = 0;
    std::size_t i = 0, j = 0;
    while (i < a.cells.size() && j < b.cells.size()) {
        if (a.cells[i].first == b.cells[j].first) {
            ++common;
            ++i;
            ++j;
        } else if (a.cells[i].first < b.cells[j].first) {
            ++i;
        } else {
            ++j;
        }
    }
    const std::size_t uni = a.cells.size() + b.cells.size() - common;
    return uni == 0 ? 0.0 : 1.0 - static_cast<double>(common) / static_cast<double>(uni);
}

MarkovFit fit_markov(const SeqData& d, int k, std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = d.seqs.size();
    const auto kk = static_cast<std::size_t>(k);

    // Seed sequences chosen k-means++ style on transition-set overlap, then
    // soft responsibilities towards the closest seed.
    std::vector<std::size_t> seeds{rng.below(n)};
    std::vector<double> dist(n);
    while (seeds.size() < kk) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = 1.0;
            for (const auto s : seeds) {
                best = std::min(best, overlap_distance(d.seqs[i], d.seqs[s]));
            }
            dist[i] = best * best;
            total += dist[i];
        }
        std::size_t pick = rng.below(n);
        if (total > 0.0) {
            double u = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                u -= dist[i];
                if (u < 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        seeds.push_back(pick);
    }
    std::vector<std::vector<double>> resp(n, std::vector<double>(kk, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_d = 2.0;
        for (std::size_t c = 0; c < kk; ++c) {
            const double dd = overlap_distance(d.seqs[i], d.seqs[seeds[c]]);
            if (dd < best_d) {
                best_d = dd;
                best = c;
            }
        }
        for (std::size_t c = 0; c < kk; ++c) {
            resp[i][c] = kk == 1 ? 1.0 : (c == best ? 0.9 : 0.1 / static_cast<double>(kk - 1));
        }
    }

    MarkovFit fit;
    fit.weights.assign(kk, 1.0 / static_cast<double>(kk));
    fit.tables.assign(kk, std::vector<double>(d.rows * d.cols, 0.0));
    fit.log_tables.assign(kk, {});
    m_step(fit, d, resp);

    MarkovFit previous;
    for (int it = 0; it < 300; ++it) {
        const double ll = e_step(fit, d, resp);
        if (it > 0 && ll < fit.ll - 1e-9 * (1.0 + std::abs(fit.ll))) {
            // Flooring can make a step lose likelihood; keep the better fit.
            fit = std::move(previous);
            e_step(fit, d, resp);
            break;
        }
        const bool converged = it > 0 && std::abs(ll - fit.ll) <= 1e-9 * (1.0 + std::abs(ll));
        fit.ll = ll;
        fit.trace.push_back(ll);
        if (converged || it == 299) {
            break;
        }
        previous = fit;
        m_step(fit, d, resp);
    }
    fit.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        fit.assignment[i] = static_cast<int>(std::max_element(resp[i].begin(), resp[i].end()) - resp[i].begin());
    }
    return fit;
}

} // namespace

SequenceClusters sequence_cluster(std::span<const StudentLog> logs, int k_max, std::uint64_t seed) {
    if (logs.empty()) {
        throw ConfigError("sequence clustering needs at least one log");
    }
    SequenceClusters out;
    {
        std::set<std::string> alphabet;
        for (const auto& log : logs) {
            for (const auto& e : log.events) {
                alphabet.insert(EventSignature::of(e).encode());
            }
        }
        out.model.alphabet.assign(alphabet.begin(), alphabet.end());
    }
    SeqData d;
    d.symbols = out.model.symbols();
    d.rows = d.symbols + 1;
    d.cols = d.symbols + 1;
    const std::size_t start_row = d.symbols;
    const std::size_t end_col = d.symbols;

    std::set<std::uint32_t> used_cells;
    std::set<std::size_t> used_rows;
    std::set<std::vector<std::size_t>> distinct;
    for (const auto& log : logs) {
        const auto sym = out.model.encode(log.events);
        distinct.insert(sym);
        std::map<std::uint32_t, double> cells;
        std::size_t prev = start_row;
        for (const auto s : sym) {
            cells[static_cast<std::uint32_t>(prev * d.cols + s)] += 1.0;
            prev = s;
        }
        cells[static_cast<std::uint32_t>(prev * d.cols + end_col)] += 1.0;
        SparseCounts sc;
        for (const auto& [cell, count] : cells) {
            sc.cells.emplace_back(cell, count);
            used_cells.insert(cell);
            used_rows.insert(cell / d.cols);
        }
        d.seqs.push_back(std::move(sc));
    }

    const double n = static_cast<double>(logs.size());
    const double free_per_component = static_cast<double>(used_cells.size()) - static_cast<double>(used_rows.size());
    const bool degenerate = out.model.alphabet.size() <= 1 || distinct.size() <= 1;

    MarkovFit best;
    double best_bic = neg_inf;
    int worse = 0;
    const int k_limit = degenerate ? 1 : std::min<int>(k_max, static_cast<int>(distinct.size()));
    for (int k = 1; k <= k_limit; ++k) {
        MarkovFit candidate;
        for (std::uint64_t r = 0; r < 2; ++r) {
            auto fit = fit_markov(d, k, mix_seed(seed, static_cast<std::uint64_t>(k) * 16 + r));
            if (fit.ll > candidate.ll) {
                candidate = std::move(fit);
            }
            if (k == 1) {
                break;  // Deterministic given the data.
            }
        }
        const double p = k * free_per_component + (k - 1);
        const double score = candidate.ll - p / 2.0 * std::log(n);
        if (score > best_bic) {
            best_bic = score;
            best = std::move(candidate);
            worse = 0;
        } else if (++worse >= 2) {
            break;
        }
    }

    out.assignment = best.assignment;
    const auto map = relabel(out.assignment, best.weights.size());
    double wsum = 0.0;
    for (std::size_t c = 0; c < map.size(); ++c) {
        if (map[c] >= 0) {
            wsum += best.weights[c];
        }
    }
    std::vector<MarkovComponent> comps(static_cast<std::size_t>(*std::max_element(map.begin(), map.end()) + 1));
    for (std::size_t c = 0; c < map.size(); ++c) {
        if (map[c] < 0) {
            continue;
        }
        auto& mc = comps[static_cast<std::size_t>(map[c])];
        mc.weight = best.weights[c] / wsum;
        const auto& table = best.tables[c];
        mc.initial.assign(table.begin() + static_cast<std::ptrdiff_t>(start_row * d.cols),
                          table.begin() + static_cast<std::ptrdiff_t>((start_row + 1) * d.cols));
        for (std::size_t r = 0; r < d.symbols; ++r) {
            mc.transition.emplace_back(table.begin() + static_cast<std::ptrdiff_t>(r * d.cols),
                                       table.begin() + static_cast<std::ptrdiff_t>((r + 1) * d.cols));
        }
    }
    out.model.components = std::move(comps);
    out.ll_trace = std::move(best.trace);
    return out;
}

void ClusterConfig::validate() const {
    const bool vector_method = method == ClusterMethod::XMeans || method == ClusterMethod::Em;
    if (vector_method && !feature) {
        throw ConfigError(std::string(to_string(method)) + " needs a feature function");
    }
    if (!vector_method && feature) {
        throw ConfigError(std::string(to_string(method)) + " does not take a feature function");
    }
    if (k_max < 1) {
        throw ConfigError("k_max must be at least 1");
    }
    weights.validate();
}

std::optional<int> Clustering::cluster_of(std::string_view student) const {
    for (std::size_t i = 0; i < students.size(); ++i) {
        if (students[i] == student) {
            return assignment[i];
        }
    }
    return std::nullopt;
}

std::vector<std::size_t> Clustering::members(int cluster) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] == cluster) {
            out.push_back(i);
        }
    }
    return out;
}

Clustering cluster_logs(std::span<const StudentLog> logs, const ClusterConfig& config, std::uint64_t seed) {
    config.validate();
    if (logs.empty()) {
        throw ConfigError("cannot cluster an empty cohort");
    }
    Clustering c;
    c.method = config.method;
    c.feature = config.feature;
    c.weights = config.weights;
    for (const auto& log : logs) {
        c.students.push_back(log.student);
    }

    switch (config.method) {
    case ClusterMethod::None:
        c.k = 1;
        c.assignment.assign(logs.size(), 0);
        break;
    case ClusterMethod::XMeans:
    case ClusterMethod::Em: {
        std::vector<FeatureVector> vectors;
        for (const auto& log : logs) {
            vectors.push_back(compute_feature(*config.feature, log, config.weights));
        }
        auto vc = config.method == ClusterMethod::XMeans ? xmeans(vectors, config.k_max, seed)
                                                         : em_cluster(vectors, config.k_max, seed);
        c.normalizer = std::move(vc.normalizer);
        c.centroids = std::move(vc.centroids);
        c.assignment = std::move(vc.assignment);
        c.mixture_weights = std::move(vc.mixture_weights);
        c.variances = std::move(vc.variances);
        c.k = static_cast<int>(c.centroids.size());
        break;
    }
    case ClusterMethod::Sequence: {
        auto sc = sequence_cluster(logs, config.k_max, seed);
        c.sequence = std::move(sc.model);
        c.assignment = std::move(sc.assignment);
        c.k = static_cast<int>(c.sequence.components.size());
        break;
    }
    }
    return c;
}

int assign(const Clustering& c, const FeatureVector& raw) {
    if (c.centroids.empty()) {
        return 0;
    }
    return nearest(c.centroids, c.normalizer.apply(raw));
}

int assign_sequence(const Clustering& c, std::span<const EventRecord> events, bool complete) {
    const auto& model = c.sequence;
    if (model.components.size() <= 1) {
        return 0;
    }
    const auto sym = model.encode(events);
    int best = 0;
    double best_score = neg_inf;
    for (std::size_t j = 0; j < model.components.size(); ++j) {
        const double score = std::log(model.components[j].weight) + model.log_likelihood(j, sym, complete);
        if (score > best_score) {
            best_score = score;
            best = static_cast<int>(j);
        }
    }
    return best;
}

int assign(const Clustering& c, const StudentLog& log, bool complete) {
    switch (c.method) {
    case ClusterMethod::None: return 0;
    case ClusterMethod::XMeans:
    case ClusterMethod::Em: return assign(c, compute_feature(*c.feature, log, c.weights));
    case ClusterMethod::Sequence: return assign_sequence(c, log.events, complete);
    }
    return 0;
}

int default_cluster(const Clustering& c) {
    if (c.method == ClusterMethod::Sequence) {
        int best = 0;
        for (std::size_t j = 1; j < c.sequence.components.size(); ++j) {
            if (c.sequence.components[j].weight > c.sequence.components[static_cast<std::size_t>(best)].weight) {
                best = static_cast<int>(j);
            }
        }
        return best;
    }
    if (c.centroids.empty()) {
        return 0;
    }
    // z-scoring puts the global attribute mean at the origin.
    return nearest(c.centroids, FeatureVector(c.centroids.front().size(), 0.0));
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) {
        throw ConfigError("labelings differ in length");
    }
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        ra[a[i]] += 1;
        rb[b[i]] += 1;
    }
    auto c2 = [](double x) { return x * (x - 1) / 2; };
    double sum_joint = 0, sum_a = 0, sum_b = 0;
    for (const auto& [_, v] : joint) sum_joint += c2(v);
    for (const auto& [_, v] : ra) sum_a += c2(v);
    for (const auto& [_, v] : rb) sum_b += c2(v);
    const double total = c2(static_cast<double>(a.size()));
    if (total == 0) {
        return 1.0;
    }
    const double expected = sum_a * sum_b / total;
    const double max_index = (sum_a + sum_b) / 2;
    if (max_index == expected) {
        return 1.0;
    }
    return (sum_joint - expected) / (max_index - expected);
}

} // namespace csm
