#pragma once

// Checks a library automaton (and optionally its reach table) against the
// brute-force counts. States are matched by replaying each log through
// both sides in lockstep, so no key format is shared.

#include "csm/automaton.hpp"
#include "csm/prediction.hpp"
#include "oracle.hpp"

#include <map>
#include <string>
#include <vector>

namespace compare {

inline bool same(double x, double y) { return x == y; }

/// Empty when everything matches; otherwise the first difference.
inline std::string mismatch(const csm::ExtendedAutomaton& a, const csm::ReachTable* reach,
                            const std::vector<csm::StudentLog>& logs, const oracle::Counts& c) {
    std::map<csm::StateId, std::string> key_of;
    auto bind = [&](csm::StateId s, const std::string& k) -> bool {
        auto [it, fresh] = key_of.emplace(s, k);
        return fresh || it->second == k;
    };
    for (const auto& log : logs) {
        const auto path = a.replay(log.events);
        const auto trace = oracle::trace_of(log);
        if (path.size() + 1 != trace.keys.size()) return "path length differs for " + log.student;
        if (!bind(csm::initial_state, trace.keys[0])) return "initial state differs";
        for (std::size_t i = 0; i < path.size(); ++i) {
            if (!bind(path[i].state, trace.keys[i + 1])) return "state identity differs for " + log.student;
        }
    }
    if (a.cohort_size() != c.cohort) return "cohort size";
    if (a.state_count() != c.gamma.size()) {
        return "state count " + std::to_string(a.state_count()) + " vs " + std::to_string(c.gamma.size());
    }
    std::size_t normal = c.phi.size(), vec = c.phi_vec.size();
    if (a.transition_count() != normal + vec) return "transition count";
    for (const auto s : a.states()) {
        if (!key_of.count(s)) return "state s" + std::to_string(s) + " unreached";
        const auto& k = key_of[s];
        if (a.state(s).gamma != c.gamma.at(k)) return "gamma of " + k;
        const char z = "wyro"[static_cast<int>(a.state(s).zone)];
        if (z != c.zone.at(k)) return "zone of " + k;
        if (!same(csm::support(a, s), c.support(k))) return "support of " + k;
    }
    for (const auto t : a.transitions()) {
        const auto& tr = a.transition(t);
        csm::EventRecord probe;
        probe.kind = tr.sig.kind;
        probe.action = tr.sig.action;
        probe.error_class = tr.sig.error_class;
        probe.corrective = tr.sig.corrective;
        const std::string sig = oracle::sig_of(probe);
        if (!c.dst.count({key_of[tr.src], sig}) || c.dst.at({key_of[tr.src], sig}) != key_of[tr.dst]) {
            return "destination of " + sig;
        }
        const std::pair<std::string, std::string> id{key_of[tr.src], sig};
        if (tr.is_vector) {
            if (!c.phi_vec.count(id)) return "vector-ness of " + id.first + " " + sig;
            const auto& v = c.phi_vec.at(id);
            if (tr.phi_vec.size() != v.size()) return "vector length at " + sig;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (tr.phi_vec[i] != v[i]) return "vector entry at " + sig;
            }
        } else {
            if (!c.phi.count(id) || c.phi.at(id) != tr.phi) return "phi of " + sig;
        }
        if (!same(csm::confidence(a, t), c.confidence(id))) return "confidence of " + sig;
    }
    if (reach) {
        std::size_t n = 0;
        for (const auto& [pair, count] : reach->entries()) {
            const std::pair<std::string, std::string> k{key_of[pair.first], key_of[pair.second]};
            if (!c.reach.count(k) || c.reach.at(k) != count) return "reach count";
            if (!same(reach->probability(a, pair.first, pair.second),
                      double(c.reach.at(k)) / double(c.gamma.at(k.first)))) {
                return "reach probability";
            }
            ++n;
        }
        if (n != c.reach.size()) return "reach entries " + std::to_string(n) + " vs " + std::to_string(c.reach.size());
    }
    return {};
}

} // namespace compare
