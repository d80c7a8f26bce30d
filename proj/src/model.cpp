#include "csm/model.hpp"

#include "csm/error.hpp"
#include "csm/text.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace csm {

namespace {

constexpr std::string_view model_format = "csm-model";
constexpr int model_version = 1;

} // namespace

std::string Checkpoint::encode() const {
    if (kind == Kind::ProtocolStep) {
        return "step:" + action;
    }
    return "time:" + text::format_double(ratio);
}

Checkpoint Checkpoint::parse(std::string_view s) {
    const auto colon = s.find(':');
    if (colon == std::string_view::npos) {
        throw ConfigError("checkpoint '" + std::string(s) + "' must be step:ACTION or time:RATIO");
    }
    const auto kind = s.substr(0, colon);
    const auto arg = s.substr(colon + 1);
    Checkpoint c;
    if (kind == "step") {
        if (!is_valid_action_id(arg)) {
            throw ConfigError("checkpoint '" + std::string(s) + "': invalid action");
        }
        c.kind = Kind::ProtocolStep;
        c.action = std::string(arg);
    } else if (kind == "time") {
        const auto r = text::parse_double(arg);
        if (!r || *r <= 0.0 || *r > 1.0) {
            throw ConfigError("checkpoint '" + std::string(s) + "': ratio must be in (0, 1]");
        }
        c.kind = Kind::TimeFraction;
        c.ratio = *r;
    } else {
        throw ConfigError("checkpoint '" + std::string(s) + "' must be step:ACTION or time:RATIO");
    }
    return c;
}

void ModelConfig::validate() const {
    clustering.validate();
    for (const auto& c : checkpoints) {
        Checkpoint::parse(c.encode());
    }
}

std::size_t CollectiveModel::member_count() const {
    std::size_t n = 0;
    for (const auto& c : clusters) {
        n += c.members.size();
    }
    return n;
}

std::optional<int> CollectiveModel::cluster_of(std::string_view student) const {
    for (std::size_t j = 0; j < clusters.size(); ++j) {
        for (const auto& log : clusters[j].members) {
            if (log.student == student) {
                return static_cast<int>(j);
            }
        }
    }
    return std::nullopt;
}

CollectiveModel build_model(std::span<const StudentLog> input, const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    if (input.empty()) {
        throw ConfigError("cannot build a model from zero logs");
    }
    std::vector<StudentLog> logs;
    std::set<std::string_view> seen;
    for (const auto& log : input) {
        if (!seen.insert(log.student).second) {
            throw IntegrityError("student '" + log.student + "' appears twice");
        }
        logs.push_back(apply_relevance(log, config.relevance));
    }

    CollectiveModel m;
    m.config = config;
    m.seed = seed;
    m.source_digest = text::hex64(text::fnv1a64(serialize_logs(logs)));
    m.clustering = cluster_logs(logs, config.clustering, seed);
    m.clusters.resize(static_cast<std::size_t>(m.clustering.k));
    for (std::size_t i = 0; i < logs.size(); ++i) {
        m.clusters[static_cast<std::size_t>(m.clustering.assignment[i])].members.push_back(logs[i]);
    }
    for (auto& c : m.clusters) {
        c.automaton = build_automaton(c.members);
        c.reach = compute_reach_table(c.automaton, c.members);
    }
    return m;
}

namespace {

StudentLog* find_member(ClusterData& c, std::string_view student) {
    for (auto& log : c.members) {
        if (log.student == student) {
            return &log;
        }
    }
    return nullptr;
}

/// Applies `events` as a fresh student; fills the session's walk state.
void enter_cluster(ClusterData& c, LiveSession& s, std::span<const EventRecord> events) {
    s.visits = {};
    s.path.clear();
    c.automaton.begin_student(&s.visits);
    StateId current = initial_state;
    Count repeats = 0;
    for (const auto& step : fold_repeats(events)) {
        const StateId next = c.automaton.add_event(current, step.event, repeats, &s.visits);
        const auto t = c.automaton.find_transition(current, EventSignature::of(step.event));
        s.path.push_back({*t, next, c.automaton.transition(*t).is_vector ? repeats : 0});
        current = next;
        repeats = step.extra_repeats;
    }
    s.current = current;
    s.repeat_run = repeats;
    c.reach.apply_path(c.automaton, s.path, +1);
}

/// Average total time of the complete member logs, excluding `skip`.
std::optional<double> average_total_time(const ClusterData& c, std::string_view skip) {
    double sum = 0.0;
    int n = 0;
    for (const auto& log : c.members) {
        if (log.student != skip && log.completed() && log.total_time) {
            sum += *log.total_time;
            ++n;
        }
    }
    if (n == 0) {
        return std::nullopt;
    }
    return sum / n;
}

/// Number of leading events that make up the excerpt of `events` at the
/// checkpoint, or nullopt when the checkpoint was not reached.
std::optional<std::size_t> excerpt_length(std::span<const EventRecord> events, const Checkpoint& cp,
                                          std::optional<double> time_limit) {
    if (cp.kind == Checkpoint::Kind::ProtocolStep) {
        for (std::size_t i = 0; i < events.size(); ++i) {
            if (events[i].kind == EventKind::Do && events[i].action == cp.action) {
                return i + 1;
            }
        }
        return std::nullopt;
    }
    if (!time_limit || events.empty() || !events.front().timestamp) {
        return std::nullopt;
    }
    const double start = *events.front().timestamp;
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (events[i].timestamp && *events[i].timestamp - start >= *time_limit) {
            return i + 1;
        }
    }
    return std::nullopt;
}

StudentLog excerpt_log(const StudentLog& log, std::size_t n) {
    StudentLog out;
    out.student = log.student;
    out.events.assign(log.events.begin(), log.events.begin() + static_cast<std::ptrdiff_t>(n));
    // The excerpt's duration stands in for the total time.
    if (!out.events.empty()) {
        out.completion = Completion{out.events.back().seq + 1, out.events.back().timestamp};
    }
    out.refresh_total_time();
    return out;
}

} // namespace

LiveSession start_session(CollectiveModel& m, const StudentId& student) {
    if (!is_valid_student_id(student)) {
        throw ConfigError("invalid student id '" + student + "'");
    }
    LiveSession s;
    s.student = student;
    s.cluster = default_cluster(m.clustering);
    s.crossed.assign(m.config.checkpoints.size(), false);
    for (std::size_t j = 0; j < m.clusters.size(); ++j) {
        std::lock_guard lock(m.clusters[j].mutex.get());
        if (find_member(m.clusters[j], student)) {
            throw IntegrityError("student '" + student + "' is already in the model");
        }
    }
    auto& c = m.clusters[static_cast<std::size_t>(s.cluster)];
    std::lock_guard lock(c.mutex.get());
    StudentLog log;
    log.student = student;
    c.members.push_back(std::move(log));
    enter_cluster(c, s, {});
    return s;
}

void observe(CollectiveModel& m, LiveSession& session, const EventRecord& raw) {
    if (m.config.relevance.irrelevant_actions.contains(raw.action) && !m.config.relevance.keep_irrelevant) {
        return;
    }
    StudentLog single;
    single.events.push_back(raw);
    single = apply_relevance(single, m.config.relevance);
    EventRecord e = single.events.front();
    e.student = session.student;
    if (!session.prefix.empty() && e.seq <= session.prefix.back().seq) {
        throw IntegrityError("student '" + session.student + "': seq " + std::to_string(e.seq) +
                             " does not increase");
    }

    auto& c = m.clusters[static_cast<std::size_t>(session.cluster)];
    {
        std::lock_guard lock(c.mutex.get());
        StudentLog* member = find_member(c, session.student);
        if (!member) {
            throw IntegrityError("student '" + session.student + "' has no live entry in its cluster");
        }
        if (!session.prefix.empty() && is_repeat(session.prefix.back(), e)) {
            ++session.repeat_run;
        } else {
            const auto before = session.path;
            const StateId next = c.automaton.add_event(session.current, e, session.repeat_run, &session.visits);
            const auto t = c.automaton.find_transition(session.current, EventSignature::of(e));
            session.path.push_back({*t, next, c.automaton.transition(*t).is_vector ? session.repeat_run : 0});
            session.current = next;
            session.repeat_run = 0;
            if (c.automaton.state(next).zone == Zone::RelevantError) {
                c.reach.apply_path(c.automaton, before, -1);
                c.reach.apply_path(c.automaton, session.path, +1);
            }
        }
        session.prefix.push_back(e);
        member->events.push_back(e);
    }

    for (std::size_t i = 0; i < m.config.checkpoints.size(); ++i) {
        if (session.crossed[i]) {
            continue;
        }
        const auto& cp = m.config.checkpoints[i];
        std::optional<double> limit;
        if (cp.kind == Checkpoint::Kind::TimeFraction) {
            std::lock_guard lock(c.mutex.get());
            const auto avg = average_total_time(c, session.student);
            if (avg) {
                limit = cp.ratio * *avg;
            }
        }
        if (excerpt_length(session.prefix, cp, limit)) {
            session.crossed[i] = true;
            session.pending_checkpoint = true;
        }
    }
}

void finish_session(CollectiveModel& m, LiveSession& session, const Completion& completion) {
    auto& c = m.clusters[static_cast<std::size_t>(session.cluster)];
    std::lock_guard lock(c.mutex.get());
    StudentLog* member = find_member(c, session.student);
    if (!member) {
        throw IntegrityError("student '" + session.student + "' has no live entry in its cluster");
    }
    if (!member->events.empty() && completion.seq <= member->events.back().seq) {
        throw IntegrityError("student '" + session.student + "': completion seq does not increase");
    }
    member->completion = completion;
    member->refresh_total_time();
}

bool maybe_reclassify(CollectiveModel& m, LiveSession& session) {
    if (!session.pending_checkpoint) {
        return false;
    }
    session.pending_checkpoint = false;
    if (m.clusters.size() < 2 || m.clustering.method == ClusterMethod::None) {
        return false;
    }
    // The latest checkpoint crossed decides the excerpt length.
    std::size_t cp_index = 0;
    for (std::size_t i = 0; i < session.crossed.size(); ++i) {
        if (session.crossed[i]) {
            cp_index = i;
        }
    }
    const auto& cp = m.config.checkpoints[cp_index];

    const int k = static_cast<int>(m.clusters.size());
    std::vector<bool> eligible(static_cast<std::size_t>(k), false);
    std::vector<FeatureVector> centroids(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        auto& c = m.clusters[static_cast<std::size_t>(j)];
        std::lock_guard lock(c.mutex.get());
        std::optional<double> limit;
        if (cp.kind == Checkpoint::Kind::TimeFraction) {
            const auto avg = average_total_time(c, session.student);
            if (!avg) {
                continue;
            }
            limit = cp.ratio * *avg;
        }
        FeatureVector sum;
        int n = 0;
        for (const auto& log : c.members) {
            if (log.student == session.student) {
                continue;
            }
            const auto len = excerpt_length(log.events, cp, limit);
            if (!len) {
                continue;
            }
            ++n;
            if (m.clustering.feature) {
                const auto f = compute_feature(*m.clustering.feature, excerpt_log(log, *len), m.clustering.weights);
                if (sum.empty()) {
                    sum.assign(f.size(), 0.0);
                }
                for (std::size_t d = 0; d < f.size(); ++d) {
                    sum[d] += f[d];
                }
            }
        }
        if (n == 0) {
            continue;
        }
        eligible[static_cast<std::size_t>(j)] = true;
        for (auto& v : sum) {
            v /= n;
        }
        centroids[static_cast<std::size_t>(j)] = m.clustering.normalizer.apply(sum);
    }

    int best = -1;
    if (m.clustering.method == ClusterMethod::Sequence) {
        const auto& model = m.clustering.sequence;
        const auto sym = model.encode(session.prefix);
        double best_score = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            if (!eligible[static_cast<std::size_t>(j)]) {
                continue;
            }
            const auto& comp = model.components[static_cast<std::size_t>(j)];
            const double score = std::log(comp.weight) + model.log_likelihood(static_cast<std::size_t>(j), sym, false);
            if (score > best_score) {
                best_score = score;
                best = j;
            }
        }
    } else {
        StudentLog prefix;
        prefix.student = session.student;
        prefix.events = session.prefix;
        const auto x = m.clustering.normalizer.apply(
            compute_feature(*m.clustering.feature, excerpt_log(prefix, prefix.events.size()), m.clustering.weights));
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            if (!eligible[static_cast<std::size_t>(j)]) {
                continue;
            }
            double d = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double diff = x[i] - centroids[static_cast<std::size_t>(j)][i];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
    }
    if (best < 0 || best == session.cluster) {
        return false;
    }

    const int from = session.cluster;
    auto& a = m.clusters[static_cast<std::size_t>(std::min(from, best))];
    auto& b = m.clusters[static_cast<std::size_t>(std::max(from, best))];
    // Both clusters, lower index first.
    std::scoped_lock lock(a.mutex.get(), b.mutex.get());
    auto& src = m.clusters[static_cast<std::size_t>(from)];
    auto& dst = m.clusters[static_cast<std::size_t>(best)];

    const auto it = std::find_if(src.members.begin(), src.members.end(),
                                 [&](const StudentLog& l) { return l.student == session.student; });
    if (it == src.members.end()) {
        throw IntegrityError("student '" + session.student + "' has no live entry in its cluster");
    }
    StudentLog moved = std::move(*it);
    src.members.erase(it);
    src.reach.apply_path(src.automaton, session.path, -1);
    src.automaton.remove_log(moved);

    enter_cluster(dst, session, moved.events);
    dst.members.push_back(std::move(moved));
    session.cluster = best;
    return true;
}

int stream_log(CollectiveModel& m, const StudentLog& log) {
    auto session = start_session(m, log.student);
    int moves = 0;
    for (const auto& e : log.events) {
        observe(m, session, e);
        moves += maybe_reclassify(m, session) ? 1 : 0;
    }
    if (log.completion) {
        finish_session(m, session, *log.completion);
    }
    return moves;
}

int best_cluster(const CollectiveModel& m, const StudentLog& log) {
    const int j = assign(m.clustering, apply_relevance(log, m.config.relevance), true);
    return std::clamp(j, 0, static_cast<int>(m.clusters.size()) - 1);
}

// ---------------------------------------------------------------------------
// Model file

namespace {

std::string join_doubles(std::span<const double> v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) {
            s += ',';
        }
        s += text::format_double(v[i]);
    }
    return s;
}

std::vector<double> parse_doubles(std::string_view s, std::string_view what) {
    std::vector<double> out;
    if (text::trim(s).empty()) {
        return out;
    }
    for (auto part : text::split(s, ',')) {
        const auto v = text::parse_double(part);
        if (!v) {
            throw LoadError("bad number in " + std::string(what));
        }
        out.push_back(*v);
    }
    return out;
}

std::string weights_text(const ErrorWeights& w) {
    return "dependency:" + text::format_double(w.dependency) + ",incompatibility:" +
           text::format_double(w.incompatibility) + ",world:" + text::format_double(w.world) +
           ",other:" + text::format_double(w.other);
}

ErrorWeights parse_weights_text(std::string_view s) {
    ErrorWeights w;
    for (const auto& item : text::split_list(s)) {
        const auto colon = item.find(':');
        const auto v = colon == std::string::npos ? std::nullopt : text::parse_double(item.substr(colon + 1));
        const auto name = item.substr(0, colon == std::string::npos ? 0 : colon);
        if (!v) {
            throw ConfigError("bad weight '" + item + "'");
        }
        if (name == "dependency") w.dependency = *v;
        else if (name == "incompatibility") w.incompatibility = *v;
        else if (name == "world") w.world = *v;
        else if (name == "other") w.other = *v;
        else throw ConfigError("unknown error class '" + name + "' in weights");
    }
    return w;
}

} // namespace

std::string save_model(const CollectiveModel& m) {
    std::string out = "# collective student model\n[meta]\n";
    out += "format = " + std::string(model_format) + "\n";
    out += "version = " + std::to_string(model_version) + "\n";
    out += "seed = " + std::to_string(m.seed) + "\n";
    out += "source = " + m.source_digest + "\n";
    out += "method = " + std::string(to_string(m.config.clustering.method)) + "\n";
    out += "feature = " + (m.config.clustering.feature ? std::string(to_string(*m.config.clustering.feature)) : "-") +
           "\n";
    out += "weights = " + weights_text(m.config.clustering.weights) + "\n";
    out += "k_max = " + std::to_string(m.config.clustering.k_max) + "\n";
    {
        std::string cps;
        for (const auto& c : m.config.checkpoints) {
            cps += (cps.empty() ? "" : ", ") + c.encode();
        }
        out += "checkpoints = " + cps + "\n";
        std::string irr;
        for (const auto& a : m.config.relevance.irrelevant_actions) {
            irr += (irr.empty() ? "" : ", ") + a;
        }
        out += "irrelevant_actions = " + irr + "\n";
        out += std::string("keep_irrelevant = ") + (m.config.relevance.keep_irrelevant ? "1" : "0") + "\n";
    }
    out += "clusters = " + std::to_string(m.clusters.size()) + "\n";

    const auto& c = m.clustering;
    out += "\n[clustering]\n";
    out += "k = " + std::to_string(c.k) + "\n";
    if (c.method == ClusterMethod::XMeans || c.method == ClusterMethod::Em) {
        out += "normalizer_mean = " + join_doubles(c.normalizer.mean) + "\n";
        out += "normalizer_scale = " + join_doubles(c.normalizer.scale) + "\n";
        for (const auto& v : c.centroids) {
            out += "centroid = " + join_doubles(v) + "\n";
        }
        if (c.method == ClusterMethod::Em) {
            out += "mixture_weights = " + join_doubles(c.mixture_weights) + "\n";
            for (const auto& v : c.variances) {
                out += "variance = " + join_doubles(v) + "\n";
            }
        }
    }
    if (c.method == ClusterMethod::Sequence) {
        std::string alpha;
        for (const auto& s : c.sequence.alphabet) {
            alpha += (alpha.empty() ? "" : ",") + s;
        }
        out += "alphabet = " + alpha + "\n";
        for (const auto& comp : c.sequence.components) {
            out += "component = " + text::format_double(comp.weight) + "\n";
            out += "initial = " + join_doubles(comp.initial) + "\n";
            for (const auto& row : comp.transition) {
                out += "row = " + join_doubles(row) + "\n";
            }
        }
    }

    for (std::size_t j = 0; j < m.clusters.size(); ++j) {
        const auto& cl = m.clusters[j];
        std::lock_guard lock(cl.mutex.get());
        out += "\n[cluster " + std::to_string(j) + " automaton]\n";
        out += cl.automaton.serialize();
        const auto ids = cl.automaton.canonical_state_ids();
        ReachTable canonical = cl.reach;
        canonical.remap(ids);
        for (const auto& [key, n] : canonical.entries()) {
            out += "reach = " + std::to_string(key.first) + ' ' + std::to_string(key.second) + ' ' +
                   std::to_string(n) + "\n";
        }
        out += "\n[cluster " + std::to_string(j) + " members]\n";
        for (const auto& log : cl.members) {
            out += "student = " + log.student + "\n";
            for (const auto& e : log.events) {
                out += "event = " + format_event_line(e) + "\n";
            }
            if (log.completion) {
                out += "end = " + std::to_string(log.completion->seq) + ' ' +
                       (log.completion->timestamp ? text::format_double(*log.completion->timestamp) : "-") + "\n";
            }
        }
    }
    out += '\n';
    out += "checksum = " + text::hex64(text::fnv1a64(out)) + "\n";
    return out;
}

namespace {

const text::Section& require_section(const std::vector<text::Section>& sections, std::string_view name) {
    for (const auto& s : sections) {
        if (s.name == name) {
            return s;
        }
    }
    throw LoadError("missing section [" + std::string(name) + "]");
}

const std::string& require(const text::Section& s, std::string_view key) {
    const auto* v = s.find(key);
    if (!v) {
        throw LoadError("[" + s.name + "] lacks '" + std::string(key) + "'");
    }
    return *v;
}

std::vector<StudentLog> parse_members(const text::Section& s) {
    std::vector<StudentLog> logs;
    for (std::size_t i = 0; i < s.entries.size(); ++i) {
        const auto& [key, value] = s.entries[i];
        const auto where = "line " + std::to_string(s.entry_lines[i]) + ": ";
        if (key == "student") {
            if (!is_valid_student_id(value)) {
                throw LoadError(where + "invalid student id");
            }
            logs.emplace_back();
            logs.back().student = value;
            continue;
        }
        if (logs.empty()) {
            throw LoadError(where + "member data before a student line");
        }
        auto& log = logs.back();
        if (key == "event") {
            std::vector<StudentLog> parsed;
            try {
                parsed = parse_logs(value);
            } catch (const Error& e) {
                throw LoadError(where + e.what());
            }
            if (parsed.size() != 1 || parsed[0].events.size() != 1 || parsed[0].student != log.student) {
                throw LoadError(where + "bad event line");
            }
            const auto& e = parsed[0].events[0];
            if (log.completion || (!log.events.empty() && e.seq <= log.events.back().seq)) {
                throw LoadError(where + "events out of order");
            }
            log.events.push_back(e);
        } else if (key == "end") {
            const auto parts = text::split(value, ' ');
            const auto seq = parts.size() == 2 ? text::parse_int(parts[0]) : std::nullopt;
            std::optional<double> ts;
            if (parts.size() == 2 && parts[1] != "-") {
                ts = text::parse_double(parts[1]);
                if (!ts) {
                    throw LoadError(where + "bad completion timestamp");
                }
            }
            if (!seq || log.completion || (!log.events.empty() && *seq <= log.events.back().seq)) {
                throw LoadError(where + "bad completion line");
            }
            log.completion = Completion{*seq, ts};
        } else {
            throw LoadError(where + "unknown member field '" + key + "'");
        }
    }
    for (auto& log : logs) {
        log.refresh_total_time();
    }
    return logs;
}

} // namespace

CollectiveModel load_model(std::string_view document) {
    // Checksum covers everything before the checksum line.
    const auto pos = document.rfind("\nchecksum = ");
    if (pos == std::string_view::npos) {
        throw LoadError("model document has no checksum");
    }
    const auto body = document.substr(0, pos + 1);
    const auto stated = text::trim(document.substr(pos + 12));
    if (stated != text::hex64(text::fnv1a64(body))) {
        throw LoadError("model checksum mismatch");
    }

    std::vector<text::Section> sections;
    try {
        sections = text::parse_sections(body);
    } catch (const ParseError& e) {
        throw LoadError(e.what());
    }
    const auto& meta = require_section(sections, "meta");
    if (require(meta, "format") != model_format) {
        throw LoadError("not a model document");
    }
    if (require(meta, "version") != std::to_string(model_version)) {
        throw LoadError("unsupported model version " + require(meta, "version"));
    }

    CollectiveModel m;
    {
        const auto& text_seed = require(meta, "seed");
        const auto [ptr, ec] = std::from_chars(text_seed.data(), text_seed.data() + text_seed.size(), m.seed);
        if (ec != std::errc{} || ptr != text_seed.data() + text_seed.size()) {
            throw LoadError("bad seed");
        }
    }
    m.source_digest = require(meta, "source");

    auto& cc = m.config.clustering;
    const auto method = parse_cluster_method(require(meta, "method"));
    if (!method) {
        throw LoadError("unknown method");
    }
    cc.method = *method;
    if (require(meta, "feature") != "-") {
        cc.feature = parse_feature_kind(require(meta, "feature"));
        if (!cc.feature) {
            throw LoadError("unknown feature");
        }
    }
    const auto k_max = text::parse_int(require(meta, "k_max"));
    if (!k_max) {
        throw LoadError("bad k_max");
    }
    cc.k_max = static_cast<int>(*k_max);
    try {
        cc.weights = parse_weights_text(require(meta, "weights"));
        for (const auto& cp : text::split_list(require(meta, "checkpoints"))) {
            m.config.checkpoints.push_back(Checkpoint::parse(cp));
        }
        m.config.validate();
    } catch (const ConfigError& e) {
        throw LoadError(e.what());
    }
    for (const auto& a : text::split_list(require(meta, "irrelevant_actions"))) {
        m.config.relevance.irrelevant_actions.insert(a);
    }
    m.config.relevance.keep_irrelevant = require(meta, "keep_irrelevant") == "1";
    const auto nclusters = text::parse_int(require(meta, "clusters"));
    if (!nclusters || *nclusters < 1) {
        throw LoadError("bad cluster count");
    }

    auto& c = m.clustering;
    c.method = cc.method;
    c.feature = cc.feature;
    c.weights = cc.weights;
    const auto& cs = require_section(sections, "clustering");
    const auto k = text::parse_int(require(cs, "k"));
    if (!k || *k != *nclusters) {
        throw LoadError("cluster count disagrees with the clustering");
    }
    c.k = static_cast<int>(*k);
    if (c.method == ClusterMethod::XMeans || c.method == ClusterMethod::Em) {
        const std::size_t dim = feature_dimension(*c.feature);
        c.normalizer.mean = parse_doubles(require(cs, "normalizer_mean"), "normalizer");
        c.normalizer.scale = parse_doubles(require(cs, "normalizer_scale"), "normalizer");
        for (const auto& v : cs.all("centroid")) {
            c.centroids.push_back(parse_doubles(v, "centroid"));
        }
        bool ok = c.normalizer.mean.size() == dim && c.normalizer.scale.size() == dim &&
                  c.centroids.size() == static_cast<std::size_t>(c.k);
        for (const auto& v : c.centroids) {
            ok = ok && v.size() == dim;
        }
        if (c.method == ClusterMethod::Em) {
            c.mixture_weights = parse_doubles(require(cs, "mixture_weights"), "mixture weights");
            for (const auto& v : cs.all("variance")) {
                c.variances.push_back(parse_doubles(v, "variance"));
            }
            ok = ok && c.mixture_weights.size() == c.centroids.size() && c.variances.size() == c.centroids.size();
        }
        if (!ok) {
            throw LoadError("clustering section does not match the feature dimension");
        }
    }
    if (c.method == ClusterMethod::Sequence) {
        c.sequence.alphabet = text::split_list(require(cs, "alphabet"));
        if (!std::is_sorted(c.sequence.alphabet.begin(), c.sequence.alphabet.end())) {
            throw LoadError("alphabet must be sorted");
        }
        const std::size_t cols = c.sequence.symbols() + 1;
        for (std::size_t i = 0; i < cs.entries.size(); ++i) {
            const auto& [key, value] = cs.entries[i];
            if (key == "component") {
                MarkovComponent comp;
                const auto w = text::parse_double(value);
                if (!w) {
                    throw LoadError("bad component weight");
                }
                comp.weight = *w;
                c.sequence.components.push_back(std::move(comp));
            } else if (key == "initial" || key == "row") {
                if (c.sequence.components.empty()) {
                    throw LoadError("Markov table before its component");
                }
                auto row = parse_doubles(value, key);
                if (row.size() != cols) {
                    throw LoadError("Markov row has the wrong length");
                }
                auto& comp = c.sequence.components.back();
                (key == "initial" ? comp.initial : comp.transition.emplace_back()) = std::move(row);
            }
        }
        if (c.sequence.components.size() != static_cast<std::size_t>(c.k)) {
            throw LoadError("component count disagrees with k");
        }
        for (const auto& comp : c.sequence.components) {
            if (comp.initial.size() != cols || comp.transition.size() != c.sequence.symbols()) {
                throw LoadError("incomplete Markov component");
            }
        }
    }

    m.clusters.resize(static_cast<std::size_t>(c.k));
    std::set<std::string> students;
    for (std::size_t j = 0; j < m.clusters.size(); ++j) {
        auto& cl = m.clusters[j];
        const auto prefix = "cluster " + std::to_string(j);
        const auto& as = require_section(sections, prefix + " automaton");
        text::Section automaton_part = as;
        automaton_part.entries.clear();
        automaton_part.entry_lines.clear();
        std::vector<std::array<std::int64_t, 3>> reach_rows;
        for (std::size_t i = 0; i < as.entries.size(); ++i) {
            if (as.entries[i].first == "reach") {
                const auto parts = text::split(as.entries[i].second, ' ');
                std::array<std::int64_t, 3> row{};
                for (std::size_t p = 0; p < 3; ++p) {
                    const auto v = parts.size() == 3 ? text::parse_int(parts[p]) : std::nullopt;
                    if (!v || *v < 0) {
                        throw LoadError("line " + std::to_string(as.entry_lines[i]) + ": bad reach entry");
                    }
                    row[p] = *v;
                }
                reach_rows.push_back(row);
            } else {
                automaton_part.entries.push_back(as.entries[i]);
                automaton_part.entry_lines.push_back(as.entry_lines[i]);
            }
        }
        cl.automaton = ExtendedAutomaton::deserialize(automaton_part);
        cl.members = parse_members(require_section(sections, prefix + " members"));
        for (const auto& log : cl.members) {
            if (!students.insert(log.student).second) {
                throw LoadError("student '" + log.student + "' appears in two clusters");
            }
            c.students.push_back(log.student);
            c.assignment.push_back(static_cast<int>(j));
        }
        try {
            cl.reach = compute_reach_table(cl.automaton, cl.members);
        } catch (const Error& e) {
            throw LoadError(prefix + ": " + e.what());
        }
        ReachTable stored;
        for (const auto& r : reach_rows) {
            stored.set(static_cast<StateId>(r[0]), static_cast<StateId>(r[1]), r[2]);
        }
        if (!(stored == cl.reach)) {
            throw LoadError(prefix + ": stored reach table disagrees with the member logs");
        }
    }
    return m;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write '" + path.string() + "'");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw Error("failed writing '" + path.string() + "'");
    }
}

CollectiveModel read_model_file(const std::filesystem::path& path) { return load_model(read_text_file(path)); }

} // namespace csm
