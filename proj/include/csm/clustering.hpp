#pragma once

// Grouping students before modelling: three feature functions, XMeans and
// Gaussian-mixture EM over feature vectors, a mixture of Markov chains over
// event sequences, and the single-cluster baseline.

#include "csm/eventlog.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csm {

enum class ClusterMethod : std::uint8_t { None, XMeans, Em, Sequence };
enum class FeatureKind : std::uint8_t { Errors, ErrorsTime, EventsByZone };

std::string_view to_string(ClusterMethod m);
std::string_view to_string(FeatureKind f);
std::optional<ClusterMethod> parse_cluster_method(std::string_view s);
std::optional<FeatureKind> parse_feature_kind(std::string_view s);

struct ErrorWeights {
    double dependency = 1.0;
    double incompatibility = 1.0;
    double world = 0.5;
    double other = 0.25;

    double of(ErrorClass c) const;
    /// Throws ConfigError unless all weights are finite, non-negative and
    /// at least one is positive.
    void validate() const;

    friend bool operator==(const ErrorWeights&, const ErrorWeights&) = default;
};

using FeatureVector = std::vector<double>;

/// Seconds charged to a student who never finished.
inline constexpr double incomplete_time_penalty = 86400.0;

/// [sum of weights of TRY/FAIL events]
FeatureVector feature_errors(const StudentLog& log, const ErrorWeights& w);
/// [error coefficient, total time in seconds (penalty when incomplete)]
FeatureVector feature_errors_time(const StudentLog& log, const ErrorWeights& w);
/// [correct events, irrelevant errors, relevant errors]
FeatureVector feature_events_by_zone(const StudentLog& log);
FeatureVector compute_feature(FeatureKind kind, const StudentLog& log, const ErrorWeights& w);
std::size_t feature_dimension(FeatureKind kind);

/// Per-dimension z-score. A constant dimension gets scale 1.
struct Normalizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Normalizer fit(std::span<const FeatureVector> data);
    FeatureVector apply(const FeatureVector& v) const;
};

/// First-order Markov chain over an alphabet of event signatures plus an
/// "unknown" symbol. `initial` and every row of `transition` are
/// distributions over alphabet + unknown + end-of-log.
struct MarkovComponent {
    double weight = 1.0;
    std::vector<double> initial;
    std::vector<std::vector<double>> transition;
};

struct SequenceModel {
    /// Encoded event signatures, sorted.
    std::vector<std::string> alphabet;
    std::vector<MarkovComponent> components;

    std::size_t symbols() const { return alphabet.size() + 1; }
    std::size_t unknown_symbol() const { return alphabet.size(); }
    std::size_t end_symbol() const { return alphabet.size() + 1; }
    std::vector<std::size_t> encode(std::span<const EventRecord> events) const;
    /// log P(events | component). `complete` adds the end-of-log step.
    double log_likelihood(std::size_t component, std::span<const std::size_t> symbols, bool complete) const;
};

struct Clustering {
    ClusterMethod method = ClusterMethod::None;
    std::optional<FeatureKind> feature;
    ErrorWeights weights;
    int k = 1;
    std::vector<StudentId> students;
    /// Parallel to `students`.
    std::vector<int> assignment;
    /// Vector methods: normalization and centroids in normalized space.
    Normalizer normalizer;
    std::vector<FeatureVector> centroids;
    /// EM only: component weights and diagonal variances (normalized space).
    std::vector<double> mixture_weights;
    std::vector<FeatureVector> variances;
    /// Sequence method only.
    SequenceModel sequence;

    std::optional<int> cluster_of(std::string_view student) const;
    std::vector<std::size_t> members(int cluster) const;
};

/// Vector clustering result in normalized space, before students are named.
struct VectorClusters {
    Normalizer normalizer;
    std::vector<FeatureVector> centroids;
    std::vector<int> assignment;
    std::vector<double> mixture_weights;
    std::vector<FeatureVector> variances;
};

/// BIC-guided centroid splitting (Pelleg and Moore) over z-scored vectors.
VectorClusters xmeans(std::span<const FeatureVector> vectors, int k_max, std::uint64_t seed);

/// Diagonal Gaussian mixture; k picked by 10-fold held-out log-likelihood.
VectorClusters em_cluster(std::span<const FeatureVector> vectors, int k_max, std::uint64_t seed);

struct SequenceClusters {
    SequenceModel model;
    std::vector<int> assignment;
    /// Log-likelihood after each EM iteration of the selected fit.
    std::vector<double> ll_trace;
};

/// Mixture of first-order Markov chains fitted by EM, k picked by BIC.
SequenceClusters sequence_cluster(std::span<const StudentLog> logs, int k_max, std::uint64_t seed);

struct ClusterConfig {
    ClusterMethod method = ClusterMethod::None;
    std::optional<FeatureKind> feature;
    ErrorWeights weights;
    int k_max = 10;

    /// Throws ConfigError on a method/feature mismatch.
    void validate() const;
};

Clustering cluster_logs(std::span<const StudentLog> logs, const ClusterConfig& config, std::uint64_t seed);

/// Nearest centroid in normalized space (lowest index on ties).
int assign(const Clustering& c, const FeatureVector& raw);
/// Vector methods: feature of the log, then nearest centroid. Sequence
/// method: highest posterior component. `complete` = the log has ended.
int assign(const Clustering& c, const StudentLog& log, bool complete = true);
int assign_sequence(const Clustering& c, std::span<const EventRecord> events, bool complete);

/// Cluster for a student with no history yet: centroid nearest the global
/// attribute mean (the origin after z-scoring); for the sequence method the
/// heaviest component.
int default_cluster(const Clustering& c);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

} // namespace csm
