#include "csm/eventlog.hpp"

#include "csm/error.hpp"
#include "csm/text.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace csm {

std::string_view to_string(EventKind k) {
    switch (k) {
    case EventKind::Do: return "do";
    case EventKind::Try: return "try";
    case EventKind::Fail: return "fail";
    }
    return "?";
}

std::string_view to_string(ErrorClass c) {
    switch (c) {
    case ErrorClass::None: return "none";
    case ErrorClass::Dependency: return "dependency";
    case ErrorClass::Incompatibility: return "incompatibility";
    case ErrorClass::World: return "world";
    case ErrorClass::Other: return "other";
    }
    return "?";
}

std::string_view to_string(Relevance r) {
    switch (r) {
    case Relevance::Correct: return "correct";
    case Relevance::IrrelevantError: return "irrelevant-error";
    case Relevance::RelevantError: return "relevant-error";
    case Relevance::Ignored: return "ignored";
    }
    return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view s) {
    if (s == "do") return EventKind::Do;
    if (s == "try") return EventKind::Try;
    if (s == "fail") return EventKind::Fail;
    return std::nullopt;
}

std::optional<ErrorClass> parse_error_class(std::string_view s) {
    if (s == "none") return ErrorClass::None;
    if (s == "dependency") return ErrorClass::Dependency;
    if (s == "incompatibility") return ErrorClass::Incompatibility;
    if (s == "world") return ErrorClass::World;
    if (s == "other") return ErrorClass::Other;
    return std::nullopt;
}

namespace {

bool is_token(std::string_view id, std::string_view forbidden) {
    if (id.empty()) {
        return false;
    }
    for (unsigned char c : id) {
        if (c <= ' ' || c == 0x7f || forbidden.find(static_cast<char>(c)) != std::string_view::npos) {
            return false;
        }
    }
    return true;
}

} // namespace

bool is_valid_action_id(std::string_view id) { return id != "-" && is_token(id, ",;|[]\":"); }

bool is_valid_student_id(std::string_view id) { return is_token(id, ",;|[]\":#"); }

void StudentLog::refresh_total_time() {
    total_time.reset();
    if (!completion || events.empty()) {
        return;
    }
    const auto& first = events.front().timestamp;
    std::optional<double> last = completion->timestamp;
    if (!last) {
        last = events.back().timestamp;
    }
    if (first && last) {
        total_time = *last - *first;
    }
}

Relevance classify_relevance(const EventRecord& e, const RelevanceConfig& config) {
    if (config.irrelevant_actions.contains(e.action)) {
        return config.keep_irrelevant ? Relevance::Correct : Relevance::Ignored;
    }
    switch (e.kind) {
    case EventKind::Do: return Relevance::Correct;
    case EventKind::Try: return Relevance::IrrelevantError;
    case EventKind::Fail: return Relevance::RelevantError;
    }
    return Relevance::Correct;
}

StudentLog apply_relevance(const StudentLog& log, const RelevanceConfig& config) {
    if (config.irrelevant_actions.empty()) {
        return log;
    }
    StudentLog out;
    out.student = log.student;
    out.completion = log.completion;
    for (const auto& e : log.events) {
        if (!config.irrelevant_actions.contains(e.action)) {
            out.events.push_back(e);
            continue;
        }
        if (!config.keep_irrelevant) {
            continue;
        }
        EventRecord kept = e;
        kept.kind = EventKind::Do;
        kept.error_class = ErrorClass::None;
        kept.corrective = false;
        out.events.push_back(std::move(kept));
    }
    out.refresh_total_time();
    return out;
}

std::vector<StudentLog> parse_logs(std::string_view content) {
    std::vector<StudentLog> logs;
    std::map<std::string, std::size_t, std::less<>> index;
    std::size_t lineno = 0;

    for (auto raw : text::split(content, '\n')) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') {
            raw.remove_suffix(1);
        }
        if (text::trim(raw).empty() || raw.front() == '#') {
            continue;
        }
        const auto fields = text::split(raw, '\t');
        if (fields.size() != 7) {
            throw ParseError(lineno, "expected 7 tab-separated fields, got " + std::to_string(fields.size()));
        }
        const auto student = fields[0];
        if (!is_valid_student_id(student)) {
            throw ParseError(lineno, "invalid student id");
        }
        const auto seq = text::parse_int(fields[1]);
        if (!seq) {
            throw ParseError(lineno, "invalid seq '" + std::string(fields[1]) + "'");
        }
        std::optional<double> ts;
        if (fields[2] != "-") {
            ts = text::parse_double(fields[2]);
            if (!ts) {
                throw ParseError(lineno, "invalid timestamp '" + std::string(fields[2]) + "'");
            }
        }
        const bool is_end = fields[3] == "end";
        const auto kind = parse_event_kind(fields[3]);
        if (!is_end && !kind) {
            throw ParseError(lineno, "unknown event kind '" + std::string(fields[3]) + "'");
        }
        const auto cls = parse_error_class(fields[5]);
        if (!cls) {
            throw ParseError(lineno, "unknown error class '" + std::string(fields[5]) + "'");
        }
        if (fields[6] != "0" && fields[6] != "1") {
            throw ParseError(lineno, "corrective flag must be 0 or 1");
        }
        const bool corrective = fields[6] == "1";

        auto [it, inserted] = index.try_emplace(std::string(student), logs.size());
        if (inserted) {
            logs.emplace_back();
            logs.back().student = std::string(student);
        }
        auto& log = logs[it->second];
        if (log.completion) {
            throw IntegrityError("student '" + log.student + "': record after completion marker (line " +
                                 std::to_string(lineno) + ")");
        }
        const std::int64_t prev = log.events.empty() ? INT64_MIN : log.events.back().seq;
        if (*seq <= prev) {
            throw IntegrityError("student '" + log.student + "': seq " + std::to_string(*seq) +
                                 " does not increase (line " + std::to_string(lineno) + ")");
        }

        if (is_end) {
            if (fields[4] != "-" || *cls != ErrorClass::None || corrective) {
                throw ParseError(lineno, "completion marker must read 'end - none 0'");
            }
            log.completion = Completion{*seq, ts};
            continue;
        }
        if (!is_valid_action_id(fields[4])) {
            throw ParseError(lineno, "invalid action id '" + std::string(fields[4]) + "'");
        }
        if (*kind != EventKind::Do && *cls == ErrorClass::None) {
            throw ParseError(lineno, "try/fail events need an error class");
        }
        if (corrective && *kind != EventKind::Do) {
            throw ParseError(lineno, "only do events can be corrective");
        }
        log.events.push_back(EventRecord{std::string(student), *seq, ts, *kind, std::string(fields[4]), *cls,
                                         corrective});
    }

    for (auto& log : logs) {
        log.refresh_total_time();
    }
    return logs;
}

std::string format_event_line(const EventRecord& e) {
    std::string line = e.student;
    line += '\t';
    line += std::to_string(e.seq);
    line += '\t';
    line += e.timestamp ? text::format_double(*e.timestamp) : "-";
    line += '\t';
    line += to_string(e.kind);
    line += '\t';
    line += e.action;
    line += '\t';
    line += to_string(e.error_class);
    line += '\t';
    line += e.corrective ? '1' : '0';
    return line;
}

std::string serialize_logs(std::span<const StudentLog> logs) {
    std::string out;
    for (const auto& log : logs) {
        for (const auto& e : log.events) {
            out += format_event_line(e);
            out += '\n';
        }
        if (log.completion) {
            out += log.student;
            out += '\t';
            out += std::to_string(log.completion->seq);
            out += '\t';
            out += log.completion->timestamp ? text::format_double(*log.completion->timestamp) : "-";
            out += "\tend\t-\tnone\t0\n";
        }
    }
    return out;
}

std::vector<StudentLog> read_log_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open log file '" + path.string() + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_logs(buf.str());
}

} // namespace csm
