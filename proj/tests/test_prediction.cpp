#include "csm/automaton.hpp"
#include "csm/error.hpp"
#include "csm/prediction.hpp"
#include "support/fixtures.hpp"

#include <doctest.h>

#include <algorithm>

using namespace csm;

namespace {

StateId at(const ExtendedAutomaton& a, const StudentLog& log, std::size_t n) {
    const std::vector<EventRecord> prefix(log.events.begin(), log.events.begin() + static_cast<long>(n));
    const auto path = a.replay(prefix);
    return path.empty() ? initial_state : path.back().state;
}

struct Figure {
    std::vector<StudentLog> logs = fixtures::figure_cohort();
    ExtendedAutomaton a = build_automaton(logs);
    ReachTable reach = compute_reach_table(a, logs);
    // f00 repaired AC and forgot 5; f03 never added AC and forgot 5.
    StateId state1 = at(a, logs[0], 1);
    StateId yellow2 = at(a, logs[0], 2);
    StateId white2 = at(a, logs[0], 3);
    StateId red_ac = at(a, logs[0], 6);
    StateId red5 = at(a, logs[0], 10);
    StateId white3 = at(a, logs[3], 5);
};

} // namespace

TEST_CASE("next-event distribution") {
    const std::vector<StudentLog> one{fixtures::make_log("s", {"do A", "do B"}, true)};
    const auto lin = build_automaton(one);
    const auto d = next_distribution(lin, initial_state);
    REQUIRE(d.size() == 1);
    CHECK(d[0].confidence == 1.0);

    const Figure f;
    const auto n1 = next_distribution(f.a, f.state1);
    const auto it = std::find_if(n1.begin(), n1.end(), [](const NextEvent& e) { return e.sig.label() == "try 3"; });
    REQUIRE(it != n1.end());
    CHECK(it->confidence == 0.40);

    const auto t = fixtures::tiny3();
    const auto a = build_automaton(t);
    const auto nA = next_distribution(a, at(a, t[0], 1));
    REQUIRE(nA.size() == 3);
    CHECK(nA[0].sig.label() == "do B");
    CHECK(nA[1].sig.label() == "do C");
    CHECK(nA[2].sig.label() == "try C");
    for (const auto& e : nA) CHECK(e.confidence == 1.0 / 3.0);
}

TEST_CASE("reach probabilities are student fractions") {
    const Figure f;
    CHECK(f.reach.probability(f.a, f.white2, f.red_ac) == 0.60);
    CHECK(f.reach.probability(f.a, f.white3, f.red5) == 0.70);
    // An error that always comes first is never reached from later states.
    CHECK(f.reach.probability(f.a, f.red5, f.red_ac) == 0.0);
}

TEST_CASE("floundering risk") {
    const Figure f;
    CHECK(flounder_risk(f.a, f.yellow2, 3) == 0.70);
    CHECK(flounder_risk(f.a, f.yellow2, 0) == 1.0);
    CHECK_THROWS_AS(flounder_risk(f.a, f.white2, 3), DomainError);

    const auto t = fixtures::tiny3();
    const auto a = build_automaton(t);
    CHECK(flounder_risk(a, at(a, t[1], 2), 1) == 1.0);
}

TEST_CASE("hint triggers") {
    const Figure f;
    HintPolicy p;
    p.min_confidence = 0.35;
    p.min_reach = 0.65;
    p.flounder_repeats = 3;
    p.flounder_prob = 0.65;
    const auto hints = hint_triggers(f.a, f.reach, p);
    const auto has = [&](StateId s, PredictionKind k, const std::string& label, std::optional<StateId> target) {
        return std::any_of(hints.begin(), hints.end(), [&](const Prediction& h) {
            return h.state == s && h.kind == k && h.sig.label() == label && (!target || h.target == *target);
        });
    };
    CHECK(has(f.state1, PredictionKind::Direct, "try 3", std::nullopt));
    CHECK(has(f.white3, PredictionKind::Indirect, "fail 5", f.red5));
    CHECK(has(f.yellow2, PredictionKind::Flounder, "try 3", std::nullopt));
    const auto direct = std::find_if(hints.begin(), hints.end(), [&](const Prediction& h) {
        return h.state == f.state1 && h.kind == PredictionKind::Direct;
    });
    CHECK(direct->probability == 0.40);
    CHECK(std::is_sorted(hints.begin(), hints.end(), [](const Prediction& x, const Prediction& y) {
        return std::tie(x.state, x.kind) < std::tie(y.state, y.kind);
    }));

    HintPolicy never;
    never.min_confidence = never.min_support = never.min_reach = never.flounder_prob = 1.01;
    CHECK(hint_triggers(f.a, f.reach, never).empty());

    HintPolicy bad;
    bad.flounder_repeats = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("indirect witness path follows the most confident route") {
    const Figure f;
    const auto path = most_probable_path(f.a, f.white3, f.red5);
    REQUIRE(path.size() >= 2);
    CHECK(path.front() == f.white3);
    CHECK(path.back() == f.red5);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        bool linked = false;
        for (const auto t : f.a.state(path[i]).out) linked |= f.a.transition(t).dst == path[i + 1];
        CHECK(linked);
    }
}

TEST_CASE("reach table patches match a recount") {
    const auto logs = fixtures::figure_cohort();
    auto a = build_automaton(logs);
    auto reach = compute_reach_table(a, logs);
    const auto path = a.replay(logs[7].events);
    reach.apply_path(a, path, -1);
    a.remove_log(logs[7]);
    std::vector<StudentLog> rest = logs;
    rest.erase(rest.begin() + 7);
    CHECK(reach == compute_reach_table(a, rest));
}
