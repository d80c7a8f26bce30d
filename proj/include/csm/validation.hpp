#pragma once

// Alignment of test logs against a (support, confidence) submodel, the
// mean error over a test set, repeated 90/10 cross-validation, and the
// per-cluster error frequency table.

#include "csm/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csm {

struct SubmodelFilter {
    double support = 0.0;
    double confidence = 0.0;

    friend bool operator==(const SubmodelFilter&, const SubmodelFilter&) = default;
};

/// How a test event matched the model, independent of the filter.
struct StepMatch {
    enum class Branch : std::uint8_t { Missing, Normal, FirstExit, RepeatedExit };
    Branch branch = Branch::Missing;
    StateId source = 0;
    StateId target = 0;
    TransitionId transition = 0;
    /// Identity of the event across students: cluster, source situation,
    /// signature and branch.
    std::string identity;
};

/// E for one matched event. Missing -> 1; below the filter -> 0; otherwise
/// 1 - phi/gamma(source), using phi_vec[0] for a first-time exit and the
/// sum of the other entries for an exit after repeats.
double event_error(const ExtendedAutomaton& a, const StepMatch& match, const SubmodelFilter& filter);

/// Walks the log through one automaton, creating temporary situations for
/// unmatched events and resuming when a later situation exists.
std::vector<StepMatch> match_log(const ExtendedAutomaton& a, const StudentLog& log, int cluster = 0);

struct AlignmentResult {
    int cluster = 0;
    std::vector<double> errors;
    std::vector<std::string> identities;
    double mean = 0.0;
    int temporary_states = 0;
};

AlignmentResult align(const CollectiveModel& m, const StudentLog& log, const SubmodelFilter& filter);

struct WeightedError {
    double error = 0.0;
    Count students = 1;
};

/// Sum E_i n_i / sum n_i. Throws UndefinedValueError when empty.
double mean_error(std::span<const WeightedError> events);

/// Eq-8 style mean over several aligned logs: identical events share one
/// error, weighted by the number of distinct students that produced them.
double test_set_error(std::span<const AlignmentResult> results, std::span<const StudentId> students);

struct GridReport {
    std::string method;
    std::string feature;
    /// Clusters found on the full cohort.
    int k = 1;
    std::vector<double> supports;
    std::vector<double> confidences;
    /// cells[support][confidence], mean over splits.
    std::vector<std::vector<double>> cells;
    int splits = 0;
    std::uint64_t seed = 0;
};

std::vector<double> default_thresholds();

/// `splits` independent 90/10 splits; the test share rounds up.
GridReport cross_validate(std::span<const StudentLog> logs, const ModelConfig& config,
                          std::span<const double> supports, std::span<const double> confidences, int splits,
                          std::uint64_t seed, int jobs = 1);

std::string render_grid_text(const GridReport& r);
/// feature,method,k,support,<one column per confidence>
std::string render_grid_csv(const GridReport& r);

struct ErrorFrequencyTable {
    /// Relevant errors, by FAIL signature label.
    std::vector<std::string> errors;
    std::vector<std::size_t> cluster_sizes;
    /// frequencies[error][cluster]: share of the cluster's students whose
    /// log contains the error.
    std::vector<std::vector<double>> frequencies;
    /// Sample variance across clusters, per error (0 for one cluster).
    std::vector<double> variances;
    std::vector<double> cluster_averages;
    double average_variance = 0.0;
};

/// Table for an arbitrary partition of logs. An empty `selection` picks
/// the `top` errors made by the most students.
ErrorFrequencyTable error_frequency_table(std::span<const std::vector<StudentLog>> groups,
                                          std::span<const std::string> selection = {}, std::size_t top = 10);
ErrorFrequencyTable error_by_cluster_report(const CollectiveModel& m, std::span<const std::string> selection = {},
                                            std::size_t top = 10);
std::string render_error_table(const ErrorFrequencyTable& t);

} // namespace csm
