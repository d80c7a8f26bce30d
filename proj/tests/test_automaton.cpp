#include "csm/automaton.hpp"
#include "csm/error.hpp"
#include "csm/prediction.hpp"
#include "support/compare.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace csm;

namespace {

/// Oracle key after a sequence of event specs.
std::string okey(const std::vector<std::string>& specs) {
    oracle::Situation s;
    std::int64_t seq = 1;
    for (const auto& spec : specs) s = s.after(fixtures::event("x", seq++, spec));
    return s.key();
}

/// State reached by the first `n` events of `log`.
StateId at(const ExtendedAutomaton& a, const StudentLog& log, std::size_t n) {
    const std::vector<EventRecord> prefix(log.events.begin(), log.events.begin() + static_cast<long>(n));
    const auto path = a.replay(prefix);
    return path.empty() ? initial_state : path.back().state;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("figure cohort satisfies the figure's counts (standalone oracle)") {
    const auto logs = fixtures::figure_cohort();
    const auto c = oracle::count(logs);
    REQUIRE(c.cohort == 50);

    const auto s1 = okey({"do 1"});
    const std::pair<std::string, std::string> try3{s1, "try/3/1"};
    CHECK(c.confidence(try3) == 0.40);

    const auto yellow = okey({"do 1", "try 3 dependency"});
    const std::pair<std::string, std::string> exit{yellow, "do/2/0"};
    CHECK(c.phi_vec.at(exit) == std::vector<long>{1, 3, 2, 14});

    const auto white2 = okey({"do 1", "do 2"});
    const auto white3 = okey({"do 1", "do 2", "do 3"});
    const auto red_ac = okey({"do 1", "do 2", "do AC", "do 3", "fail AC incompatibility"});
    const auto red5 = okey({"do 1", "do 2", "do 3", "do 4", "do 6", "fail 5 dependency"});
    CHECK(c.gamma.at(white2) == 50);
    CHECK(c.gamma.at(white3) == 20);
    CHECK(c.support(red5) == 0.70);
    CHECK(double(c.reach.at({white2, red_ac})) / double(c.gamma.at(white2)) == 0.60);
    CHECK(double(c.reach.at({white3, red5})) / double(c.gamma.at(white3)) == 0.70);
}

TEST_CASE("figure cohort automaton reproduces the figure") {
    const auto logs = fixtures::figure_cohort();
    const auto a = build_automaton(logs);
    const auto& f00 = logs[0]; // repaired AC, forgot 5
    const auto& f03 = logs[3]; // no AC, forgot 5

    const auto s1 = at(a, f00, 1);
    const auto yellow = at(a, f00, 2);
    const auto t = a.find_transition(s1, EventSignature::of(f00.events[1]));
    REQUIRE(t);
    CHECK(confidence(a, *t) == 0.40);
    CHECK(a.state(yellow).zone == Zone::IrrelevantError);
    const auto exit = a.find_transition(yellow, EventSignature::of(f00.events[2]));
    REQUIRE(exit);
    CHECK(a.transition(*exit).phi_vec == std::vector<Count>{1, 3, 2, 14});

    const auto red5 = at(a, f00, 10);
    CHECK(a.state(red5).zone == Zone::RelevantError);
    CHECK(support(a, red5) == 0.70);
    CHECK(at(a, f03, 8) == red5);

    CHECK(export_dot(a).find("[label=\"try 3 / 40%\"]") != std::string::npos);
    CHECK(export_dot(a).find("[5%, 15%, 10%, 70%]") != std::string::npos);

    CHECK(compare::mismatch(a, nullptr, logs, oracle::count(logs)).empty());
}

TEST_CASE("tiny3 hand counts") {
    const auto logs = fixtures::tiny3();
    const auto a = build_automaton(logs);
    CHECK(a.state_count() == 7);
    const auto A = at(a, logs[0], 1);
    REQUIRE(a.state(A).out.size() == 3);
    for (const auto t : a.state(A).out) {
        CHECK(confidence(a, t) == doctest::Approx(1.0 / 3.0));
    }
    const auto doB = a.find_transition(A, EventSignature::of(logs[0].events[1]));
    const auto doC = a.find_transition(A, EventSignature::of(logs[2].events[1]));
    REQUIRE(doB);
    REQUIRE(doC);
    CHECK(a.transition(*doB).phi == 1);
    CHECK(a.transition(*doC).phi == 1);
    CHECK(confidence(a, *doB) == 1.0 / 3.0);

    const auto yellow = at(a, logs[1], 2);
    CHECK(a.state(yellow).zone == Zone::IrrelevantError);
    CHECK(a.state(yellow).gamma == 1);
    CHECK(support(a, yellow) == 1.0 / 3.0);
    REQUIRE(a.state(yellow).out.size() == 1);
    CHECK(a.transition(a.state(yellow).out[0]).phi_vec == std::vector<Count>{0, 1});
    // Both orders through B reconverge.
    CHECK(at(a, logs[1], 4) == at(a, logs[0], 2));
}

TEST_CASE("tiny3 graph matches the hand-drawn golden file") {
    const auto a = build_automaton(fixtures::tiny3());
    const auto dot = export_dot(a);
    CHECK(dot == read_file(std::string(CSM_TEST_DIR) + "/golden/tiny3.dot"));
    // node section: two attribute lines plus one line per state
    std::istringstream in(dot);
    std::string line;
    int node_lines = 0, yellow = 0;
    std::getline(in, line);
    while (std::getline(in, line) && line.find("->") == std::string::npos && line != "}") {
        ++node_lines;
        yellow += line.find("fillcolor=yellow") != std::string::npos;
    }
    CHECK(node_lines == 9);
    CHECK(yellow == 1);
}

TEST_CASE("trivial automata") {
    const ExtendedAutomaton empty;
    CHECK(empty.state_count() == 1);
    CHECK_THROWS_AS(support(empty, initial_state), UndefinedValueError);
    const auto dot = export_dot(empty);
    CHECK(std::count(dot.begin(), dot.end(), '[') == 2); // node attributes + s0
    CHECK(dot.find("s0 [label=\"s0\"") != std::string::npos);

    const std::vector<StudentLog> one{fixtures::make_log("s", {"do A", "do B"}, true)};
    const auto a = build_automaton(one);
    CHECK(a.state_count() == 3);
    CHECK(a.transition_count() == 2);
    for (const auto s : a.states()) {
        CHECK(a.state(s).gamma == 1);
        CHECK(support(a, s) == 1.0);
    }
    for (const auto t : a.transitions()) {
        CHECK(a.transition(t).phi == 1);
        CHECK(confidence(a, t) == 1.0);
    }
}

TEST_CASE("add_event creates then merges") {
    ExtendedAutomaton a;
    a.begin_student();
    const auto e = fixtures::event("s1", 1, "do A");
    const auto s = a.add_event(initial_state, e, 0);
    CHECK(a.state_count() == 2);
    CHECK(a.state(s).gamma == 1);
    CHECK(a.state(s).zone == Zone::Correct);
    a.begin_student();
    CHECK(a.add_event(initial_state, fixtures::event("s2", 1, "do A"), 0) == s);
    CHECK(a.state_count() == 2);
    CHECK(a.state(s).gamma == 2);
    CHECK(a.transition(*a.find_transition(initial_state, EventSignature::of(e))).phi == 2);

    const auto y = a.add_event(s, fixtures::event("s2", 2, "try 3 dependency"), 0);
    const auto out = a.add_event(y, fixtures::event("s2", 4, "do 2"), 1);
    (void)out;
    const auto t = a.find_transition(y, EventSignature::of(fixtures::event("s2", 4, "do 2")));
    REQUIRE(t);
    CHECK(a.transition(*t).phi_vec == std::vector<Count>{0, 1});
}

TEST_CASE("remove_log inverts apply_log") {
    const auto logs = fixtures::tiny3();
    SUBCASE("single log") {
        auto a = build_automaton(std::vector<StudentLog>{logs[0]});
        a.remove_log(logs[0]);
        CHECK(a.serialize() == ExtendedAutomaton().serialize());
        CHECK(a.state_count() == 1);
        CHECK(a.cohort_size() == 0);
    }
    SUBCASE("last of several") {
        auto a = build_automaton(logs);
        a.remove_log(logs[2]);
        CHECK(a.serialize() == build_automaton(std::vector<StudentLog>{logs[0], logs[1]}).serialize());
    }
    SUBCASE("a log never applied") {
        auto a = build_automaton(std::vector<StudentLog>{logs[0]});
        const auto before = a.serialize();
        CHECK_THROWS_AS(a.remove_log(logs[1]), IntegrityError);
        CHECK(a.serialize() == before);
    }
}

TEST_CASE("student order does not matter") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 20; ++i) {
        auto logs = fixtures::random_cohort(rng);
        const auto a = build_automaton(logs).serialize();
        std::shuffle(logs.begin(), logs.end(), rng);
        CHECK(build_automaton(logs).serialize() == a);
    }
}

TEST_CASE("random cohorts match the brute-force counts") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 30; ++i) {
        const auto logs = fixtures::random_cohort(rng);
        const auto a = build_automaton(logs);
        const auto reach = compute_reach_table(a, logs);
        CHECK(compare::mismatch(a, &reach, logs, oracle::count(logs)) == "");
        // Flow conservation holds wherever no student comes back to a state
        // (a repeated corrective action with nothing to repair is a loop).
        std::set<StateId> revisited;
        for (const auto& log : logs) {
            std::set<StateId> seen{initial_state};
            for (const auto& step : a.replay(log.events)) {
                if (!seen.insert(step.state).second) revisited.insert(step.state);
            }
        }
        for (const auto s : a.states()) {
            if (revisited.count(s)) continue;
            Count out = 0;
            for (const auto t : a.state(s).out) out += a.transition(t).frequency();
            CHECK(out <= a.state(s).gamma);
        }
    }
}

TEST_CASE("serialization round-trips") {
    const auto a = build_automaton(fixtures::figure_cohort());
    const auto doc = "[automaton]\n" + a.serialize();
    const auto sections = text::parse_sections(doc);
    REQUIRE(sections.size() >= 1);
    const auto b = ExtendedAutomaton::deserialize(sections.back());
    CHECK(b.serialize() == a.serialize());
    for (const auto s : a.states()) {
        CHECK(support(b, s) == support(a, s));
    }
}

TEST_CASE("deserialize rejects inconsistent documents") {
    const auto a = build_automaton(fixtures::tiny3());
    auto broken = a.serialize();
    const auto pos = broken.find("cohort_size = 3");
    REQUIRE(pos != std::string::npos);
    broken.replace(pos, 15, "cohort_size = 4");
    const auto sections = text::parse_sections("[a]\n" + broken);
    CHECK_THROWS_AS(ExtendedAutomaton::deserialize(sections.back()), LoadError);
}
