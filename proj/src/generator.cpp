#include "csm/generator.hpp"

#include "csm/error.hpp"
#include "csm/rng.hpp"
#include "csm/text.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace csm {

void validate(const ProtocolSpec& protocol) {
    if (protocol.actions.empty()) {
        throw ConfigError("protocol has no actions");
    }
    std::set<ActionId> seen;
    for (const auto& a : protocol.actions) {
        if (!is_valid_action_id(a)) {
            throw ConfigError("invalid action id '" + a + "'");
        }
        if (!seen.insert(a).second) {
            throw ConfigError("duplicate action '" + a + "'");
        }
    }
    for (const auto& d : protocol.distractors) {
        if (!is_valid_action_id(d) || seen.contains(d)) {
            throw ConfigError("distractor '" + d + "' is invalid or also a protocol action");
        }
    }
    std::set<ActionId> grouped;
    for (const auto& group : protocol.commuting_groups) {
        std::vector<std::size_t> positions;
        for (const auto& a : group) {
            const auto it = std::find(protocol.actions.begin(), protocol.actions.end(), a);
            if (it == protocol.actions.end()) {
                throw ConfigError("commuting action '" + a + "' is not in the protocol");
            }
            if (!grouped.insert(a).second) {
                throw ConfigError("action '" + a + "' appears in two commuting groups");
            }
            positions.push_back(static_cast<std::size_t>(it - protocol.actions.begin()));
        }
        std::sort(positions.begin(), positions.end());
        for (std::size_t i = 1; i < positions.size(); ++i) {
            if (positions[i] != positions[i - 1] + 1) {
                throw ConfigError("commuting group is not a contiguous block of the protocol");
            }
        }
    }
    if (!(protocol.step_seconds > 0.0)) {
        throw ConfigError("step_seconds must be positive");
    }
}

void validate(const ErrorProfile& p) {
    for (double v : {p.p_premature, p.p_skip, p.p_distractor, p.p_abandon}) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ConfigError("profile '" + p.name + "': probabilities must lie in [0, 1]");
        }
    }
    if (!(p.repeat_geom > 0.0 && p.repeat_geom <= 1.0)) {
        throw ConfigError("profile '" + p.name + "': repeat_geom must lie in (0, 1]");
    }
    if (!(p.time_factor > 0.0)) {
        throw ConfigError("profile '" + p.name + "': time_factor must be positive");
    }
}

namespace {

struct Layout {
    // block index of each protocol action, by position in protocol.actions
    std::vector<int> block;
    std::vector<std::vector<std::size_t>> blocks;
};

Layout make_layout(const ProtocolSpec& protocol) {
    std::map<ActionId, std::size_t> group_of;
    for (std::size_t g = 0; g < protocol.commuting_groups.size(); ++g) {
        for (const auto& a : protocol.commuting_groups[g]) {
            group_of[a] = g;
        }
    }
    Layout layout;
    layout.block.resize(protocol.actions.size());
    std::optional<std::size_t> open_group;
    for (std::size_t i = 0; i < protocol.actions.size(); ++i) {
        const auto it = group_of.find(protocol.actions[i]);
        const bool continues = it != group_of.end() && open_group && *open_group == it->second;
        if (!continues) {
            layout.blocks.emplace_back();
        }
        layout.blocks.back().push_back(i);
        layout.block[i] = static_cast<int>(layout.blocks.size() - 1);
        open_group = it != group_of.end() ? std::optional(it->second) : std::nullopt;
    }
    return layout;
}

class StudentWriter {
public:
    StudentWriter(StudentId id, double start) : t_(start) { log_.student = std::move(id); }

    void emit(EventKind kind, const ActionId& action, ErrorClass cls) {
        log_.events.push_back(EventRecord{log_.student, next_seq_++, t_, kind, action, cls, false});
    }

    void advance(double seconds) { t_ += std::max(1.0, std::round(seconds)); }

    StudentLog finish(bool completed) {
        if (completed) {
            log_.completion = Completion{next_seq_++, t_};
        }
        log_.refresh_total_time();
        return std::move(log_);
    }

private:
    StudentLog log_;
    std::int64_t next_seq_ = 1;
    double t_;
};

bool step_active(const ErrorProfile& p, std::size_t pos) {
    if (p.active_steps.empty()) {
        return true;
    }
    return std::find(p.active_steps.begin(), p.active_steps.end(), static_cast<int>(pos + 1)) !=
           p.active_steps.end();
}

StudentLog generate_student(const ProtocolSpec& protocol, const Layout& layout, const ErrorProfile& p,
                            const StudentId& id, std::size_t index, std::uint64_t seed) {
    Rng rng(mix_seed(seed, index));

    // realized order: commuting blocks shuffled, everything else fixed
    std::vector<std::size_t> order;
    for (const auto& block : layout.blocks) {
        std::vector<std::size_t> b = block;
        rng.shuffle(std::span(b));
        order.insert(order.end(), b.begin(), b.end());
    }
    const std::size_t n = order.size();
    const int last_block = layout.block[order.back()];

    std::size_t stop = n;
    if (n > 1 && rng.bernoulli(p.p_abandon)) {
        stop = 1 + rng.below(n - 1);
    }

    StudentWriter out(id, 1.6e9 + 86400.0 * static_cast<double>(index));
    std::vector<std::size_t> omitted;
    std::vector<ActionId> pending_distractors;

    for (std::size_t pos = 0; pos < stop; ++pos) {
        const std::size_t action = order[pos];
        const int block = layout.block[action];
        const bool active = step_active(p, pos);

        if (active && block < last_block && rng.bernoulli(p.p_skip)) {
            omitted.push_back(action);
            continue;
        }
        if (active && !protocol.distractors.empty() && rng.bernoulli(p.p_distractor)) {
            const auto& d = protocol.distractors[rng.below(protocol.distractors.size())];
            out.advance(protocol.step_seconds * p.time_factor * rng.uniform(0.5, 1.5));
            out.emit(EventKind::Do, d, ErrorClass::None);
            pending_distractors.push_back(d);
        }
        if (active && block < last_block) {
            // first later action outside this block
            std::size_t target = n;
            for (std::size_t q = pos + 1; q < n; ++q) {
                if (layout.block[order[q]] > block) {
                    target = order[q];
                    break;
                }
            }
            if (target != n && rng.bernoulli(p.p_premature)) {
                const auto repeats = 1 + rng.geometric(p.repeat_geom);
                for (std::uint64_t r = 0; r < repeats; ++r) {
                    out.advance(rng.uniform(2.0, 8.0) * p.time_factor);
                    out.emit(EventKind::Try, protocol.actions[target], ErrorClass::Dependency);
                }
            }
        }

        out.advance(protocol.step_seconds * p.time_factor * rng.uniform(0.5, 1.5));
        out.emit(EventKind::Do, protocol.actions[action], ErrorClass::None);

        std::sort(omitted.begin(), omitted.end());
        std::vector<std::size_t> still_omitted;
        for (auto o : omitted) {
            if (layout.block[o] < block) {
                out.emit(EventKind::Fail, protocol.actions[o], ErrorClass::Dependency);
            } else {
                still_omitted.push_back(o);
            }
        }
        omitted = std::move(still_omitted);
        for (const auto& d : pending_distractors) {
            out.emit(EventKind::Fail, d, ErrorClass::Incompatibility);
        }
        pending_distractors.clear();
    }
    return out.finish(stop == n);
}

} // namespace

std::vector<LabeledLog> generate_cohort(const ProtocolSpec& protocol, std::span<const ProfileCount> profiles,
                                        std::uint64_t seed) {
    validate(protocol);
    std::size_t total = 0;
    for (const auto& pc : profiles) {
        validate(pc.profile);
        if (pc.count < 1) {
            throw ConfigError("profile '" + pc.profile.name + "': count must be at least 1");
        }
        total += static_cast<std::size_t>(pc.count);
    }
    const auto layout = make_layout(protocol);
    const int width = static_cast<int>(std::to_string(total).size());

    std::vector<LabeledLog> cohort;
    cohort.reserve(total);
    std::size_t index = 0;
    for (const auto& pc : profiles) {
        for (int i = 0; i < pc.count; ++i, ++index) {
            std::string num = std::to_string(index + 1);
            const StudentId id = "s" + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
            cohort.push_back({generate_student(protocol, layout, pc.profile, id, index, seed), pc.profile.name});
        }
    }
    return cohort;
}

std::vector<StudentLog> logs_of(std::span<const LabeledLog> cohort) {
    std::vector<StudentLog> out;
    out.reserve(cohort.size());
    for (const auto& l : cohort) {
        out.push_back(l.log);
    }
    return out;
}

namespace {

double number(const text::Section& s, std::string_view key, double fallback) {
    const auto* v = s.find(key);
    if (!v) {
        return fallback;
    }
    const auto d = text::parse_double(*v);
    if (!d) {
        throw ConfigError("[" + s.name + "] " + std::string(key) + ": not a number: '" + *v + "'");
    }
    return *d;
}

} // namespace

GeneratorConfig parse_generator_config(std::string_view content) {
    GeneratorConfig config;
    const auto sections = text::parse_sections(content);
    const auto& head = sections.front();
    if (const auto* a = head.find("actions")) {
        config.protocol.actions = text::split_list(*a);
    }
    for (const auto& group : head.all("commute")) {
        config.protocol.commuting_groups.push_back(text::split_list(group));
    }
    if (const auto* d = head.find("distractors")) {
        config.protocol.distractors = text::split_list(*d);
    }
    config.protocol.step_seconds = number(head, "step_seconds", config.protocol.step_seconds);
    validate(config.protocol);

    for (std::size_t i = 1; i < sections.size(); ++i) {
        const auto& s = sections[i];
        if (s.name.rfind("profile ", 0) != 0) {
            throw ConfigError("unknown section [" + s.name + "]");
        }
        ErrorProfile p;
        p.name = std::string(text::trim(std::string_view(s.name).substr(8)));
        p.p_premature = number(s, "p_premature", 0.0);
        p.p_skip = number(s, "p_skip", 0.0);
        p.p_distractor = number(s, "p_distractor", 0.0);
        p.repeat_geom = number(s, "repeat_geom", 1.0);
        p.p_abandon = number(s, "p_abandon", 0.0);
        p.time_factor = number(s, "time_factor", 1.0);
        if (const auto* steps = s.find("steps")) {
            for (const auto& v : text::split_list(*steps)) {
                const auto k = text::parse_int(v);
                if (!k || *k < 1) {
                    throw ConfigError("profile '" + p.name + "': invalid step '" + v + "'");
                }
                p.active_steps.push_back(static_cast<int>(*k));
            }
        }
        validate(p);
        const double w = number(s, "weight", 1.0);
        if (!(w > 0.0)) {
            throw ConfigError("profile '" + p.name + "': weight must be positive");
        }
        config.profiles.push_back(std::move(p));
        config.weights.push_back(w);
    }
    if (config.profiles.empty()) {
        ErrorProfile p;
        p.name = "default";
        config.profiles.push_back(p);
        config.weights.push_back(1.0);
    }
    return config;
}

std::vector<ProfileCount> distribute(const GeneratorConfig& config, int students) {
    if (students < static_cast<int>(config.profiles.size())) {
        throw ConfigError("need at least one student per profile");
    }
    double total = 0.0;
    for (double w : config.weights) {
        total += w;
    }
    std::vector<ProfileCount> out;
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < config.profiles.size(); ++i) {
        const double exact = students * config.weights[i] / total;
        const int base = std::max(1, static_cast<int>(std::floor(exact)));
        out.push_back({config.profiles[i], base});
        assigned += base;
        remainders.emplace_back(exact - std::floor(exact), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < students; r = (r + 1) % remainders.size()) {
        ++out[remainders[r].second].count;
        ++assigned;
    }
    for (std::size_t i = out.size(); assigned > students && i-- > 0;) {
        while (out[i].count > 1 && assigned > students) {
            --out[i].count;
            --assigned;
        }
    }
    return out;
}

} // namespace csm
