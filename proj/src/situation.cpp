#include "csm/situation.hpp"

#include "csm/text.hpp"

#include <algorithm>

namespace csm {

std::string_view to_string(Zone z) {
    switch (z) {
    case Zone::Correct: return "correct";
    case Zone::IrrelevantError: return "irrelevant-error";
    case Zone::RelevantError: return "relevant-error";
    case Zone::ConsequentError: return "consequent-error";
    }
    return "?";
}

std::optional<Zone> parse_zone(std::string_view s) {
    if (s == "correct") return Zone::Correct;
    if (s == "irrelevant-error") return Zone::IrrelevantError;
    if (s == "relevant-error") return Zone::RelevantError;
    if (s == "consequent-error") return Zone::ConsequentError;
    return std::nullopt;
}

namespace {

std::string_view kind_token(const EventSignature& sig) {
    return sig.corrective ? std::string_view("fix") : to_string(sig.kind);
}

} // namespace

std::string EventSignature::label() const {
    std::string s(kind_token(*this));
    s += ' ';
    s += action;
    return s;
}

std::string EventSignature::encode() const {
    std::string s(kind_token(*this));
    s += ':';
    s += action;
    s += ':';
    s += to_string(error_class);
    return s;
}

std::optional<EventSignature> EventSignature::decode(std::string_view s) {
    const auto parts = text::split(s, ':');
    if (parts.size() != 3) {
        return std::nullopt;
    }
    const bool fix = parts[0] == "fix";
    const auto kind = fix ? std::optional(EventKind::Do) : parse_event_kind(parts[0]);
    const auto cls = parse_error_class(parts[2]);
    if (!kind || !cls || !is_valid_action_id(parts[1])) {
        return std::nullopt;
    }
    return EventSignature{*kind, std::string(parts[1]), *cls, fix};
}

namespace {

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) {
            out += ',';
        }
        out += fmt(items[i]);
    }
    return out;
}

std::optional<std::vector<EventSignature>> decode_signatures(std::string_view s) {
    std::vector<EventSignature> out;
    if (s.empty()) {
        return out;
    }
    for (auto part : text::split(s, ',')) {
        auto sig = EventSignature::decode(part);
        if (!sig) {
            return std::nullopt;
        }
        out.push_back(std::move(*sig));
    }
    return out;
}

} // namespace

std::string SituationKey::encode() const {
    if (is_initial()) {
        return "initial";
    }
    std::string s = "done=";
    s += join(done, [](const ActionId& a) { return a; });
    s += ";unrepaired=";
    s += join(unrepaired, [](const EventSignature& e) { return e.encode(); });
    s += ";tries=";
    s += join(tries, [](const EventSignature& e) { return e.encode(); });
    s += ";last=";
    s += last->encode();
    return s;
}

std::optional<SituationKey> SituationKey::decode(std::string_view s) {
    if (s == "initial") {
        return SituationKey{};
    }
    const auto parts = text::split(s, ';');
    if (parts.size() != 4) {
        return std::nullopt;
    }
    auto field = [](std::string_view part, std::string_view name) -> std::optional<std::string_view> {
        if (part.size() < name.size() + 1 || part.substr(0, name.size()) != name || part[name.size()] != '=') {
            return std::nullopt;
        }
        return part.substr(name.size() + 1);
    };
    const auto done = field(parts[0], "done");
    const auto unrepaired = field(parts[1], "unrepaired");
    const auto tries = field(parts[2], "tries");
    const auto last = field(parts[3], "last");
    if (!done || !unrepaired || !tries || !last) {
        return std::nullopt;
    }
    SituationKey key;
    if (!done->empty()) {
        for (auto a : text::split(*done, ',')) {
            if (!is_valid_action_id(a)) {
                return std::nullopt;
            }
            key.done.emplace_back(a);
        }
    }
    auto u = decode_signatures(*unrepaired);
    auto t = decode_signatures(*tries);
    auto l = EventSignature::decode(*last);
    if (!u || !t || !l || !std::is_sorted(key.done.begin(), key.done.end())) {
        return std::nullopt;
    }
    key.unrepaired = std::move(*u);
    key.tries = std::move(*t);
    key.last = std::move(*l);
    return key;
}

SituationKey successor(const SituationKey& from, const EventRecord& e) {
    SituationKey next;
    next.done = from.done;
    next.unrepaired = from.unrepaired;
    const auto sig = EventSignature::of(e);

    switch (e.kind) {
    case EventKind::Do: {
        const auto pos = std::lower_bound(next.done.begin(), next.done.end(), e.action);
        const bool already = pos != next.done.end() && *pos == e.action;
        if (!(e.corrective && already)) {
            next.done.insert(pos, e.action);
        }
        if (e.corrective && !next.unrepaired.empty()) {
            const auto before = next.unrepaired.size();
            std::erase_if(next.unrepaired, [&](const EventSignature& u) { return u.action == e.action; });
            if (next.unrepaired.size() == before) {
                next.unrepaired.erase(next.unrepaired.begin());
            }
        }
        break;
    }
    case EventKind::Try:
        if (from.last && from.last->kind == EventKind::Try) {
            next.tries = from.tries;
            next.tries.push_back(*from.last);
        }
        break;
    case EventKind::Fail: {
        const auto pos = std::lower_bound(next.done.begin(), next.done.end(), e.action);
        if (pos != next.done.end() && *pos == e.action) {
            next.done.erase(pos);
        }
        next.unrepaired.push_back(sig);
        break;
    }
    }
    next.last = sig;
    return next;
}

Zone zone_of(const SituationKey& key) {
    if (!key.last) {
        return Zone::Correct;
    }
    switch (key.last->kind) {
    case EventKind::Do: return key.unrepaired.empty() ? Zone::Correct : Zone::ConsequentError;
    case EventKind::Try: return Zone::IrrelevantError;
    case EventKind::Fail: return Zone::RelevantError;
    }
    return Zone::Correct;
}

bool is_repeat(const EventRecord& previous, const EventRecord& e) {
    return e.kind == EventKind::Try && previous.kind == EventKind::Try && previous.action == e.action &&
           previous.error_class == e.error_class;
}

std::vector<TraceStep> fold_repeats(std::span<const EventRecord> events) {
    std::vector<TraceStep> steps;
    steps.reserve(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (i > 0 && is_repeat(events[i - 1], events[i])) {
            ++steps.back().extra_repeats;
            continue;
        }
        steps.push_back({events[i], 0});
    }
    return steps;
}

} // namespace csm
