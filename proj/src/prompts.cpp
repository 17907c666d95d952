#include "diagen/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "diagen/errors.hpp"
#include "diagen/io_util.hpp"
#include "diagen/rng.hpp"

namespace diagen {

using nlohmann::json;

const PromptGrammar& default_grammar() {
    static const PromptGrammar g{
        {"red",      "green",   "blue",    "yellow", "black",    "white",   "silver",
         "golden",   "rusty",   "shiny",   "huge",   "tiny",     "old",     "antique",
         "colorful", "striped", "spotted", "wooden", "metallic", "glossy"},
        {"on", "in", "near", "at", "by", "under", "beside", "behind", "above", "along",
         "across", "inside", "outside", "atop", "amid", "within"},
        {"foggy", "rainy", "snowy", "sunny", "cloudy", "stormy", "misty", "windy",
         "icy", "frosty", "hazy", "drizzly", "gloomy", "overcast", "humid"},
        {"road", "street", "bridge", "tunnel", "beach", "forest", "field", "mountain",
         "city", "park", "garden", "desert", "harbor", "meadow", "river", "lake",
         "hill", "barn", "garage", "rooftop"},
        {"night", "daytime", "noon", "dawn", "dusk", "sunset", "sunrise", "midnight",
         "morning", "evening", "twilight", "daybreak", "midday", "afternoon", "nightfall"}};
    return g;
}

namespace {

// Closed-class preposition list for lenient (structure-only) validation;
// deliberately broader than the generation lexicon.
const std::unordered_set<std::string>& lenient_prepositions() {
    static const std::unordered_set<std::string> preps{
        "on",      "in",      "near",    "at",      "by",      "under",   "beside",
        "behind",  "above",   "below",   "along",   "across",  "inside",  "outside",
        "atop",    "amid",    "amidst",  "among",   "within",  "over",    "beneath",
        "around",  "upon",    "against", "underneath", "through", "during", "toward",
        "towards", "past",    "onto",    "into",    "between"};
    return preps;
}

bool contains(const std::vector<std::string>& list, std::string_view word) {
    return std::find(list.begin(), list.end(), word) != list.end();
}

bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

std::vector<std::string> words_of(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::size_t count_substring(std::string_view text, std::string_view needle) {
    if (needle.empty()) return 0;
    std::size_t n = 0;
    for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

struct EnvParse {
    bool ok = false;
    std::string reason;
    std::string weather, location;  // weather may stay empty
};

// Scene phrase: preposition [article] [weather] location.
EnvParse parse_env(const std::vector<std::string>& w, const PromptGrammar& g, ValidationMode mode) {
    EnvParse r;
    if (w.empty()) {
        r.ok = true;
        return r;
    }
    const bool prep_ok = mode == ValidationMode::strict ? contains(g.prepositions, w[0])
                                                        : lenient_prepositions().count(w[0]) > 0;
    if (!prep_ok) {
        r.reason = "expected a preposition, got '" + w[0] + "'";
        return r;
    }
    std::size_t i = 1;
    if (i < w.size() && is_article(w[i])) ++i;
    const std::size_t left = w.size() - i;
    if (left == 0) {
        r.reason = "preposition '" + w[0] + "' has no object";
        return r;
    }
    if (left > 2) {
        r.reason = "scene phrase has too many words";
        return r;
    }
    if (left == 2) {
        r.weather = w[i];
        if (mode == ValidationMode::strict && !contains(g.weathers, r.weather)) {
            r.reason = "'" + r.weather + "' is not a known weather";
            return r;
        }
        ++i;
    }
    r.location = w[i];
    if (mode == ValidationMode::strict && !contains(g.locations, r.location)) {
        r.reason = "'" + r.location + "' is not a known location";
        return r;
    }
    r.ok = true;
    return r;
}

}  // namespace

PromptValidation validate_prompt(std::string_view text, std::string_view token,
                                 const PromptGrammar& grammar, ValidationMode mode) {
    PromptValidation v;
    if (token.empty()) {
        v.reason = "empty token";
        return v;
    }
    const std::size_t occurrences = count_substring(text, token);
    if (occurrences != 1) {
        v.reason = "token must occur exactly once, found " + std::to_string(occurrences);
        return v;
    }
    const auto w = words_of(text);
    if (w.size() < 5 || w[0] != "a" || w[1] != "photo" || w[2] != "of") {
        v.reason = "prompt must start with 'a photo of'";
        return v;
    }
    if (w[3] != "a" && w[3] != "an") {
        v.reason = "expected article 'a' or 'an' after the prefix";
        return v;
    }
    std::size_t tok_pos = w.size();
    for (std::size_t i = 4; i < w.size(); ++i)
        if (w[i] == token) {
            tok_pos = i;
            break;
        }
    if (tok_pos == w.size()) {
        v.reason = "token is not a standalone word";
        return v;
    }
    if (tok_pos > 5) {
        v.reason = "at most one adjective may precede the token";
        return v;
    }
    if (tok_pos == 5) {
        const std::string& adj = w[4];
        if (mode == ValidationMode::strict && !contains(grammar.adjectives, adj)) {
            v.reason = "'" + adj + "' is not a known adjective";
            return v;
        }
        v.slots_used.insert("adjective");
    }

    const std::vector<std::string> tail(w.begin() + static_cast<std::ptrdiff_t>(tok_pos) + 1,
                                        w.end());
    // A trailing "at <word>" is read as the time phrase first; if that reading
    // fails, the whole tail is retried as a scene phrase ("at the beach").
    if (tail.size() >= 2 && tail[tail.size() - 2] == "at") {
        const std::string& time = tail.back();
        const bool time_ok = mode == ValidationMode::lenient || contains(grammar.times_of_day, time);
        if (time_ok) {
            const std::vector<std::string> env(tail.begin(), tail.end() - 2);
            const EnvParse e = parse_env(env, grammar, mode);
            if (e.ok) {
                if (!env.empty()) v.slots_used.insert("preposition");
                if (!e.weather.empty()) v.slots_used.insert("weather");
                if (!e.location.empty()) v.slots_used.insert("location");
                v.slots_used.insert("time_of_day");
                v.ok = true;
                return v;
            }
        }
    }
    const EnvParse e = parse_env(tail, grammar, mode);
    if (!e.ok) {
        v.slots_used.clear();
        v.reason = e.reason;
        return v;
    }
    if (!tail.empty()) v.slots_used.insert("preposition");
    if (!e.weather.empty()) v.slots_used.insert("weather");
    if (!e.location.empty()) v.slots_used.insert("location");
    v.ok = true;
    return v;
}

std::string build_llm_instruction(const std::string& class_label, int num_prompts) {
    if (class_label.empty()) throw InputError("instruction: class label is empty");
    if (num_prompts <= 0) throw InputError("instruction: num_prompts must be positive");
    std::ostringstream out;
    out << "Create prompts for me that have the following structure:\n"
        << "\"a photo of a [adjective] <classname> [location and/or weather preposition] "
           "[weather] [location] [time of day with preposition]\"\n"
        << "The <classname> is replaced with the actual classname, e.g. 'car'\n"
        << "All the attributes in [..] are optionals. This means example prompts for car could "
           "be:\n"
        << "'a photo of a red car' (adjective optional)\n"
        << "'a photo of a car on a road' (location optional)\n"
        << "'a photo of a car in snow' (weather optional)\n"
        << "'a photo of a car at night' (time of day optional)\n"
        << "'a photo of a huge car in a tunnel' (adjective and location optionals)\n"
        << "'a photo of a green car on a foggy bridge at daytime' (all optionals)\n"
        << "'a photo of a car' (no optional)\n"
        << "If you use adjectives, they should be visual. So don't use something like "
           "'interesting'.\n"
        << "Also vary the number of optionals that you use.\n"
        << "Can you give me " << num_prompts << " prompts of this structure for class "
        << class_label << " please.";
    return out.str();
}

namespace {

struct Pattern {
    bool adjective;
    int env;  // 0 none, 1 location, 2 weather + location
    bool time;
};

// Walked in an order whose optional counts are 0,1,2,3,5,1,2,3,3,4: a single
// prompt is the bare skeleton, two already differ in count, and seven cover
// at least three distinct counts.
constexpr Pattern kPatterns[] = {
    {false, 0, false}, {true, 0, false}, {true, 0, true},  {true, 1, false}, {true, 2, true},
    {false, 0, true},  {false, 1, false}, {false, 2, false}, {false, 1, true}, {true, 2, false},
};
constexpr std::size_t kPatternCount = std::size(kPatterns);

bool starts_with_vowel(std::string_view w) {
    if (w.empty()) return false;
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(w[0])));
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

const std::string& pick(Rng& rng, const std::vector<std::string>& list) {
    return list[static_cast<std::size_t>(rng.uniform_below(list.size()))];
}

struct Realization {
    std::string text;
    std::set<std::string> slots;
};

Realization realize(const Pattern& p, const std::string& token, const PromptGrammar& g, Rng& rng) {
    Realization r;
    std::string head;
    if (p.adjective) {
        head = pick(rng, g.adjectives);
        r.slots.insert("adjective");
    }
    const std::string& article_target = p.adjective ? head : token;
    std::string text = "a photo of ";
    text += starts_with_vowel(article_target) ? "an " : "a ";
    if (!head.empty()) text += head + " ";
    text += token;
    if (p.env != 0) {
        const std::string& prep = pick(rng, g.prepositions);
        const std::string& loc = pick(rng, g.locations);
        r.slots.insert("preposition");
        r.slots.insert("location");
        text += " " + prep + " ";
        if (p.env == 2) {
            const std::string& weather = pick(rng, g.weathers);
            r.slots.insert("weather");
            text += (starts_with_vowel(weather) ? "an " : "a ") + weather + " " + loc;
        } else {
            text += (starts_with_vowel(loc) ? "an " : "a ") + loc;
        }
    }
    if (p.time) {
        r.slots.insert("time_of_day");
        text += " at " + pick(rng, g.times_of_day);
    }
    r.text = std::move(text);
    return r;
}

void check_grammar(const PromptGrammar& g) {
    if (g.adjectives.empty() || g.prepositions.empty() || g.weathers.empty() ||
        g.locations.empty() || g.times_of_day.empty())
        throw InputError("grammar: every slot list must be nonempty");
}

}  // namespace

std::vector<PromptRecord> generate_prompts_fallback(const std::string& class_label,
                                                    const std::string& token, int num_prompts,
                                                    std::uint64_t seed,
                                                    const PromptGrammar& grammar) {
    if (num_prompts <= 0) throw InputError("fallback: num_prompts must be positive");
    if (token.empty()) throw InputError("fallback: token is empty");
    check_grammar(grammar);

    Rng rng(derive_seed(seed, class_label, 0, "fallback"));
    std::vector<PromptRecord> out;
    std::unordered_set<std::string> seen;
    for (int idx = 0; idx < num_prompts; ++idx) {
        const std::size_t u = static_cast<std::size_t>(idx);
        // Later cycles skip the skeleton: it has no free slot to vary.
        const Pattern& p = u < kPatternCount ? kPatterns[u]
                                             : kPatterns[1 + (u - kPatternCount) % (kPatternCount - 1)];
        Realization r;
        bool fresh = false;
        for (int attempt = 0; attempt < 1000 && !fresh; ++attempt) {
            r = realize(p, token, grammar, rng);
            fresh = !seen.count(r.text);
        }
        if (!fresh)
            throw InputError("fallback: lexicon too small for " + std::to_string(num_prompts) +
                             " distinct prompts of class '" + class_label + "'");
        seen.insert(r.text);
        out.push_back({class_label + "-fb-" + std::to_string(idx), class_label, std::move(r.text),
                       std::move(r.slots), "fallback"});
    }
    return out;
}

namespace {

std::string strip_line_decorations(std::string s) {
    s = trim(s);
    // leading list markers: "3." / "12)" / "-" / "*"
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) ++i;
    if (i == 0 && !s.empty() && (s[0] == '-' || s[0] == '*')) i = 1;
    s = trim(s.substr(i));
    const auto is_quote = [](char c) { return c == '"' || c == '\'' || c == '`'; };
    while (!s.empty() && is_quote(s.front())) s.erase(s.begin());
    while (!s.empty() && (is_quote(s.back()) || s.back() == '.' || s.back() == ',' || s.back() == '!'))
        s.pop_back();
    return trim(s);
}

// Whole-word, case-insensitive replacement; `word` must already be lowercase.
std::string replace_word_ci(const std::string& text, const std::string& word,
                            const std::string& replacement) {
    if (word.empty()) return text;
    const std::string lower = to_lower(text);
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t hit = lower.find(word, pos);
        if (hit == std::string::npos) {
            out.append(text, pos, text.size() - pos);
            break;
        }
        const bool left_ok = hit == 0 || !std::isalnum(static_cast<unsigned char>(lower[hit - 1]));
        const std::size_t end = hit + word.size();
        const bool right_ok =
            end == lower.size() || !std::isalnum(static_cast<unsigned char>(lower[end]));
        out.append(text, pos, hit - pos);
        if (left_ok && right_ok) {
            out += replacement;
        } else {
            out.append(text, hit, word.size());
        }
        pos = end;
    }
    return out;
}

}  // namespace

std::vector<PromptRecord> parse_llm_response(const std::string& raw, const std::string& class_label,
                                             const std::string& token,
                                             const PromptGrammar& grammar, ValidationMode mode) {
    std::vector<PromptRecord> out;
    std::unordered_set<std::string> seen;
    std::istringstream in(raw);
    std::string line;
    const std::string label_lower = to_lower(class_label);
    while (std::getline(in, line)) {
        std::string s = to_lower(strip_line_decorations(line));
        if (s.empty()) continue;
        s = replace_word_ci(s, label_lower, token);
        const auto v = validate_prompt(s, token, grammar, mode);
        if (!v.ok || seen.count(s)) continue;
        seen.insert(s);
        out.push_back({class_label + "-llm-" + std::to_string(out.size()), class_label, s,
                       v.slots_used, "llm"});
    }
    return out;
}

std::vector<PromptRecord> request_prompts(TextToTextClient& client, const std::string& class_label,
                                          const std::string& token, int num_prompts,
                                          std::uint64_t seed, const PromptGrammar& grammar,
                                          int retries, bool allow_fallback) {
    if (num_prompts <= 0) throw InputError("request_prompts: num_prompts must be positive");
    if (retries <= 0) throw InputError("request_prompts: retries must be positive");
    const std::string instruction = build_llm_instruction(class_label, num_prompts);

    std::vector<PromptRecord> collected;
    std::unordered_set<std::string> seen;
    for (int attempt = 0; attempt < retries; ++attempt) {
        std::string text;
        try {
            text = client.complete(instruction, derive_seed(seed, class_label, attempt, "llm"));
        } catch (const TransportError&) {
            if (attempt + 1 == retries && !allow_fallback) throw;
            continue;
        }
        for (auto& p : parse_llm_response(text, class_label, token, grammar)) {
            if (static_cast<int>(collected.size()) >= num_prompts) break;
            if (seen.insert(p.text).second) collected.push_back(std::move(p));
        }
        if (static_cast<int>(collected.size()) >= num_prompts) break;
    }
    if (static_cast<int>(collected.size()) < num_prompts) {
        if (!allow_fallback)
            throw InputError("request_prompts: got " + std::to_string(collected.size()) +
                             " valid prompts for '" + class_label + "', need " +
                             std::to_string(num_prompts) + " and fallback is disabled");
        for (auto& p : generate_prompts_fallback(class_label, token, num_prompts, seed, grammar)) {
            if (static_cast<int>(collected.size()) >= num_prompts) break;
            if (seen.insert(p.text).second) collected.push_back(std::move(p));
        }
    }
    for (std::size_t i = 0; i < collected.size(); ++i)
        collected[i].id = class_label + "-p" + std::to_string(i);
    return collected;
}

void save_prompts(const std::vector<PromptRecord>& prompts, const std::filesystem::path& path) {
    std::unordered_set<std::string> ids;
    json j = json::array();
    for (const auto& p : prompts) {
        if (!ids.insert(p.id).second) throw InputError("prompts: duplicate id '" + p.id + "'");
        j.push_back({{"id", p.id},
                     {"class_label", p.class_label},
                     {"text", p.text},
                     {"slots_used", p.slots_used},
                     {"origin", p.origin}});
    }
    atomic_write_file(path, j.dump(2) + "\n");
}

std::vector<PromptRecord> load_prompts(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw InputError(std::string("prompts: invalid JSON: ") + e.what());
    }
    if (!j.is_array()) throw InputError("prompts: top level must be a list");
    std::vector<PromptRecord> out;
    std::unordered_set<std::string> ids;
    for (const auto& e : j) {
        PromptRecord p;
        try {
            p.id = e.at("id").get<std::string>();
            p.class_label = e.at("class_label").get<std::string>();
            p.text = e.at("text").get<std::string>();
            p.slots_used = e.at("slots_used").get<std::set<std::string>>();
            p.origin = e.at("origin").get<std::string>();
        } catch (const json::exception&) {
            throw InputError("prompts: malformed record in " + path.string());
        }
        if (p.id.empty() || p.class_label.empty() || p.text.empty())
            throw InputError("prompts: empty required field in " + path.string());
        if (p.origin != "llm" && p.origin != "fallback")
            throw InputError("prompts: unknown origin '" + p.origin + "'");
        if (!ids.insert(p.id).second) throw InputError("prompts: duplicate id '" + p.id + "'");
        out.push_back(std::move(p));
    }
    return out;
}

std::map<std::string, std::vector<PromptRecord>> group_prompts_by_class(
    const std::vector<PromptRecord>& prompts) {
    std::map<std::string, std::vector<PromptRecord>> by_class;
    for (const auto& p : prompts) by_class[p.class_label].push_back(p);
    return by_class;
}

}  // namespace diagen
