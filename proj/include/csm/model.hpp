#pragma once

// The collective student model: the cohort split into clusters, one
// automaton per cluster, live updates, checkpoint reclassification and the
// model file.

#include "csm/automaton.hpp"
#include "csm/clustering.hpp"
#include "csm/prediction.hpp"

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csm {

struct Checkpoint {
    enum class Kind : std::uint8_t { ProtocolStep, TimeFraction };
    Kind kind = Kind::ProtocolStep;
    /// ProtocolStep: reached at the first DO of this action.
    ActionId action;
    /// TimeFraction: reached when elapsed time is this share of the
    /// cluster's average total time. In (0, 1].
    double ratio = 0.0;

    /// "step:5" or "time:0.5".
    std::string encode() const;
    /// Throws ConfigError.
    static Checkpoint parse(std::string_view s);

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct ModelConfig {
    ClusterConfig clustering;
    std::vector<Checkpoint> checkpoints;
    RelevanceConfig relevance;

    void validate() const;
};

/// A mutex that copies as a fresh, unlocked mutex.
class ClusterMutex {
public:
    ClusterMutex() : m_(std::make_unique<std::mutex>()) {}
    ClusterMutex(const ClusterMutex&) : m_(std::make_unique<std::mutex>()) {}
    ClusterMutex& operator=(const ClusterMutex&) { return *this; }

    std::mutex& get() const { return *m_; }

private:
    std::unique_ptr<std::mutex> m_;
};

struct ClusterData {
    ExtendedAutomaton automaton;
    /// The logs applied to `automaton`, in application order.
    std::vector<StudentLog> members;
    ReachTable reach;
    ClusterMutex mutex;
};

struct CollectiveModel {
    ModelConfig config;
    /// Fitted at build time and frozen afterwards.
    Clustering clustering;
    std::vector<ClusterData> clusters;
    std::uint64_t seed = 0;
    /// Digest of the training logs.
    std::string source_digest;

    std::size_t member_count() const;
    /// Cluster currently holding `student`, if any.
    std::optional<int> cluster_of(std::string_view student) const;
};

/// Clusters the cohort and builds one automaton per cluster.
CollectiveModel build_model(std::span<const StudentLog> logs, const ModelConfig& config, std::uint64_t seed);

struct LiveSession {
    StudentId student;
    int cluster = 0;
    StateId current = initial_state;
    std::vector<EventRecord> prefix;
    /// Extra repeats of the blocked attempt at `current`.
    Count repeat_run = 0;
    StudentVisits visits;
    std::vector<PathStep> path;
    std::vector<bool> crossed;
    bool pending_checkpoint = false;
};

/// Registers a new student in the default cluster at s0. Throws
/// IntegrityError if the student is already in the model.
LiveSession start_session(CollectiveModel& m, const StudentId& student);

/// Applies one event to the student's cluster automaton.
void observe(CollectiveModel& m, LiveSession& session, const EventRecord& e);

/// Records the completion marker (no automaton change).
void finish_session(CollectiveModel& m, LiveSession& session, const Completion& completion);

/// When a checkpoint was crossed since the last call, compares the prefix
/// with every cluster's member excerpts truncated at that checkpoint and
/// moves the student if another cluster fits better. Returns true on a move.
bool maybe_reclassify(CollectiveModel& m, LiveSession& session);

/// Streams a whole log: start, observe every event (trying to reclassify
/// after each), finish. Returns the number of moves.
int stream_log(CollectiveModel& m, const StudentLog& log);

/// Text document with [meta], [clustering], [cluster N automaton] and
/// [cluster N members] sections and a trailing checksum line.
std::string save_model(const CollectiveModel& m);
/// Throws LoadError on version, checksum or consistency problems.
CollectiveModel load_model(std::string_view document);

CollectiveModel read_model_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

/// Cluster a test log best fits (used when validating against a model).
int best_cluster(const CollectiveModel& m, const StudentLog& log);

} // namespace csm
