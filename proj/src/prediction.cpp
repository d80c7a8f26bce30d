#include "csm/prediction.hpp"

#include "csm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

namespace csm {

Count ReachTable::count(StateId from, StateId error) const {
    const auto it = counts_.find({from, error});
    return it == counts_.end() ? 0 : it->second;
}

double ReachTable::probability(const ExtendedAutomaton& a, StateId from, StateId error) const {
    const auto gamma = a.state(from).gamma;
    if (gamma == 0) {
        throw UndefinedValueError("reach from a state nobody visited");
    }
    return static_cast<double>(count(from, error)) / static_cast<double>(gamma);
}

void ReachTable::set(StateId from, StateId error, Count n) {
    if (n == 0) {
        counts_.erase({from, error});
    } else {
        counts_[{from, error}] = n;
    }
}

void ReachTable::remap(std::span<const std::int64_t> ids) {
    std::map<std::pair<StateId, StateId>, Count> next;
    for (const auto& [key, n] : counts_) {
        const auto a = key.first < ids.size() ? ids[key.first] : -1;
        const auto b = key.second < ids.size() ? ids[key.second] : -1;
        if (a >= 0 && b >= 0) {
            next[{static_cast<StateId>(a), static_cast<StateId>(b)}] = n;
        }
    }
    counts_ = std::move(next);
}

std::vector<std::pair<StateId, StateId>> reach_pairs(const ExtendedAutomaton& a, std::span<const PathStep> path) {
    std::vector<StateId> seq{initial_state};
    for (const auto& step : path) {
        seq.push_back(step.state);
    }
    std::set<std::pair<StateId, StateId>> pairs;
    // Earliest position of each state; a later error position pairs with
    // every state seen before it.
    std::set<StateId> before;
    for (std::size_t j = 0; j < seq.size(); ++j) {
        if (a.state(seq[j]).zone == Zone::RelevantError) {
            for (const StateId s : before) {
                if (s != seq[j]) {
                    pairs.insert({s, seq[j]});
                }
            }
        }
        before.insert(seq[j]);
    }
    return {pairs.begin(), pairs.end()};
}

void ReachTable::apply_path(const ExtendedAutomaton& a, std::span<const PathStep> path, int sign) {
    for (const auto& [s, e] : reach_pairs(a, path)) {
        const Count n = count(s, e) + sign;
        if (n < 0) {
            throw IntegrityError("reach count would go below zero");
        }
        set(s, e, n);
    }
}

ReachTable compute_reach_table(const ExtendedAutomaton& a, std::span<const StudentLog> members) {
    if (static_cast<Count>(members.size()) != a.cohort_size()) {
        throw IntegrityError("member logs (" + std::to_string(members.size()) + ") do not match cohort size (" +
                             std::to_string(a.cohort_size()) + ")");
    }
    ReachTable table;
    std::vector<Count> gamma(a.state_capacity(), 0);
    for (const auto& log : members) {
        const auto path = a.replay(log.events);
        std::set<StateId> seen{initial_state};
        for (const auto& step : path) {
            seen.insert(step.state);
        }
        for (const StateId s : seen) {
            ++gamma[s];
        }
        table.apply_path(a, path, +1);
    }
    for (const StateId s : a.states()) {
        if (gamma[s] != a.state(s).gamma) {
            throw IntegrityError("member logs do not reproduce the count of state " + std::to_string(s));
        }
    }
    return table;
}

std::vector<NextEvent> next_distribution(const ExtendedAutomaton& a, StateId s) {
    std::vector<NextEvent> out;
    for (const TransitionId t : a.state(s).out) {
        out.push_back({a.transition(t).sig, t, confidence(a, t)});
    }
    std::sort(out.begin(), out.end(), [](const NextEvent& x, const NextEvent& y) { return x.sig < y.sig; });
    return out;
}

double flounder_risk(const ExtendedAutomaton& a, StateId s, Count r) {
    const auto& st = a.state(s);
    if (st.zone != Zone::IrrelevantError) {
        throw DomainError("floundering is defined for irrelevant-error states only");
    }
    if (st.gamma == 0) {
        throw UndefinedValueError("flounder risk at a state nobody visited");
    }
    if (r <= 0) {
        return 1.0;
    }
    Count n = 0;
    for (const TransitionId t : st.out) {
        const auto& v = a.transition(t).phi_vec;
        for (std::size_t i = static_cast<std::size_t>(r); i < v.size(); ++i) {
            n += v[i];
        }
    }
    return static_cast<double>(n) / static_cast<double>(st.gamma);
}

void HintPolicy::validate() const {
    for (const double v : {min_confidence, min_support, min_reach, flounder_prob}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("hint thresholds must be non-negative ratios");
        }
    }
    if (flounder_repeats < 1) {
        throw ConfigError("flounder repeats must be at least 1");
    }
}

std::string_view to_string(PredictionKind k) {
    switch (k) {
    case PredictionKind::Direct: return "direct";
    case PredictionKind::Indirect: return "indirect";
    case PredictionKind::Flounder: return "flounder";
    }
    return "?";
}

std::vector<StateId> most_probable_path(const ExtendedAutomaton& a, StateId from, StateId to) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(a.state_capacity(), inf);
    std::vector<std::int64_t> prev(a.state_capacity(), -1);
    using Item = std::pair<double, StateId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[from] = 0.0;
    queue.push({0.0, from});
    while (!queue.empty()) {
        const auto [d, s] = queue.top();
        queue.pop();
        if (d > dist[s]) {
            continue;
        }
        if (s == to) {
            break;
        }
        for (const TransitionId t : a.state(s).out) {
            const auto& tr = a.transition(t);
            const double w = -std::log(confidence(a, t));
            const double nd = d + w;
            if (nd < dist[tr.dst] || (nd == dist[tr.dst] && prev[tr.dst] > static_cast<std::int64_t>(s))) {
                dist[tr.dst] = nd;
                prev[tr.dst] = s;
                queue.push({nd, tr.dst});
            }
        }
    }
    if (dist[to] == inf) {
        return {};
    }
    std::vector<StateId> path{to};
    for (StateId s = to; s != from;) {
        s = static_cast<StateId>(prev[s]);
        path.push_back(s);
    }
    std::reverse(path.begin(), path.end());
    return path;
}

std::vector<Prediction> hint_triggers(const ExtendedAutomaton& a, const ReachTable& reach, const HintPolicy& policy) {
    policy.validate();
    std::vector<Prediction> out;
    if (a.cohort_size() == 0) {
        return out;
    }
    for (const StateId s : a.states()) {
        const auto& st = a.state(s);
        if (st.gamma == 0) {
            continue;
        }
        if (support(a, s) >= policy.min_support) {
            for (const TransitionId t : st.out) {
                const auto& tr = a.transition(t);
                const Zone z = a.state(tr.dst).zone;
                if (z != Zone::IrrelevantError && z != Zone::RelevantError) {
                    continue;
                }
                const double c = confidence(a, t);
                if (c >= policy.min_confidence) {
                    out.push_back({s, PredictionKind::Direct, tr.sig, c, tr.dst, {}});
                }
            }
        }
        if (st.zone == Zone::IrrelevantError) {
            const double risk = flounder_risk(a, s, policy.flounder_repeats);
            if (risk >= policy.flounder_prob) {
                out.push_back({s, PredictionKind::Flounder, *st.key.last, risk, s, {}});
            }
        }
    }
    for (const auto& [key, n] : reach.entries()) {
        const auto [s, e] = key;
        if (n <= 0 || s == e || !a.has_state(s) || !a.has_state(e)) {
            continue;
        }
        const double p = reach.probability(a, s, e);
        if (p >= policy.min_reach && support(a, e) >= policy.min_support) {
            out.push_back({s, PredictionKind::Indirect, *a.state(e).key.last, p, e, most_probable_path(a, s, e)});
        }
    }
    std::sort(out.begin(), out.end(), [](const Prediction& x, const Prediction& y) {
        if (x.state != y.state) return x.state < y.state;
        if (x.kind != y.kind) return x.kind < y.kind;
        if (x.sig != y.sig) return x.sig < y.sig;
        return x.target < y.target;
    });
    return out;
}

std::string render_predictions(const ExtendedAutomaton& a, std::span<const Prediction> predictions) {
    std::string out = "state\tkind\tevent\tprobability\ttarget\twitness\n";
    for (const auto& p : predictions) {
        out += 's' + std::to_string(p.state) + " (" + describe_state(a, p.state) + ")\t";
        out += std::string(to_string(p.kind)) + '\t' + p.sig.label() + '\t' + text::format_fixed(p.probability, 4);
        out += "\ts" + std::to_string(p.target) + '\t';
        for (std::size_t i = 0; i < p.witness.size(); ++i) {
            if (i) {
                out += '>';
            }
            out += 's' + std::to_string(p.witness[i]);
        }
        if (p.witness.empty()) {
            out += '-';
        }
        out += '\n';
    }
    return out;
}

} // namespace csm
