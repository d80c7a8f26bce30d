#pragma once

// Synthetic cohorts with known ground truth. Each student follows the
// protocol and injects errors according to an ErrorProfile.

#include "csm/eventlog.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csm {

struct ProtocolSpec {
    std::vector<ActionId> actions;
    /// Blocks of actions that may be done in any order among themselves.
    /// Each block is contiguous in `actions`; blocks are disjoint.
    std::vector<std::vector<ActionId>> commuting_groups;
    /// Available but incompatible actions (like adding casein to the mix).
    std::vector<ActionId> distractors;
    /// Mean duration of a correct action, seconds.
    double step_seconds = 30.0;
};

struct ErrorProfile {
    std::string name;
    /// Attempting a later action too early (blocked -> TRY events).
    double p_premature = 0.0;
    /// Omitting the current action (later DO, then FAIL for the omitted one).
    double p_skip = 0.0;
    /// Doing a distractor (DO now, FAIL at the next required DO).
    double p_distractor = 0.0;
    /// Success probability of the geometric number of extra repeats of a
    /// blocked attempt. 1 means a blocked attempt is never repeated.
    double repeat_geom = 1.0;
    double p_abandon = 0.0;
    /// Multiplies every step duration.
    double time_factor = 1.0;
    /// 1-based realized step positions where errors may occur; empty = all.
    std::vector<int> active_steps;
};

struct ProfileCount {
    ErrorProfile profile;
    int count = 0;
};

struct LabeledLog {
    StudentLog log;
    std::string profile;
};

void validate(const ProtocolSpec& protocol);
void validate(const ErrorProfile& profile);

/// Deterministic for a fixed seed: every student draws from its own stream
/// derived from (seed, student index).
std::vector<LabeledLog> generate_cohort(const ProtocolSpec& protocol, std::span<const ProfileCount> profiles,
                                        std::uint64_t seed);

std::vector<StudentLog> logs_of(std::span<const LabeledLog> cohort);

/// Protocol + profile document:
///
///   actions = 1, 2, 3, 4, 5, 6, 7
///   commute = 3, 4            (repeatable)
///   distractors = AC
///   step_seconds = 30
///
///   [profile careful]
///   p_premature = 0.05
///   p_skip = 0.02
///   p_distractor = 0.02
///   repeat_geom = 0.7
///   p_abandon = 0
///   time_factor = 1
///   steps = 2, 3              (optional)
///   weight = 3                (share of the cohort, default 1)
struct GeneratorConfig {
    ProtocolSpec protocol;
    std::vector<ErrorProfile> profiles;
    std::vector<double> weights;
};

GeneratorConfig parse_generator_config(std::string_view content);

/// Splits `students` across the profiles proportionally to their weights
/// (largest remainder; ties go to the earlier profile).
std::vector<ProfileCount> distribute(const GeneratorConfig& config, int students);

} // namespace csm
