#include <filesystem>
#include <set>
#include <unordered_set>

#include <doctest.h>

#include "diagen/errors.hpp"
#include "diagen/prompts.hpp"

using namespace diagen;

namespace {

constexpr const char* kToken = "<cls_car>";

PromptValidation check(std::string_view text, ValidationMode mode = ValidationMode::strict) {
    return validate_prompt(text, kToken, default_grammar(), mode);
}

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "diagen-test-prompts";
    std::filesystem::create_directories(dir);
    return dir;
}

class ScriptedClient : public TextToTextClient {
public:
    explicit ScriptedClient(std::string reply) : reply_(std::move(reply)) {}
    std::string complete(const std::string& instruction, std::uint64_t) override {
        ++calls;
        last_instruction = instruction;
        return reply_;
    }
    int calls = 0;
    std::string last_instruction;

private:
    std::string reply_;
};

class DeadClient : public TextToTextClient {
public:
    std::string complete(const std::string&, std::uint64_t) override {
        ++calls;
        throw TransportError("scripted outage");
    }
    int calls = 0;
};

}  // namespace

TEST_CASE("structural validation accepts the template and tracks slots") {
    auto v = check("a photo of a <cls_car>");
    CHECK(v.ok);
    CHECK(v.slots_used.empty());

    v = check("a photo of a red <cls_car>");
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"adjective"});

    v = check("a photo of a <cls_car> at night");
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"time_of_day"});

    v = check("a photo of a <cls_car> on a road");
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"preposition", "location"});

    v = check("a photo of a green <cls_car> on a foggy bridge at daytime");
    CHECK(v.ok);
    CHECK(v.slots_used ==
          std::set<std::string>{"adjective", "preposition", "weather", "location", "time_of_day"});

    // "an" before a vowel adjective
    v = check("a photo of an old <cls_car> in a garage");
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"adjective", "preposition", "location"});
}

TEST_CASE("trailing 'at word' prefers the time reading but can back off") {
    // strict: "beach" is not a time of day, so the tail re-parses as a scene
    auto v = check("a photo of a <cls_car> at the beach");
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"preposition", "location"});

    v = check("a photo of a <cls_car> at beach");
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"preposition", "location"});

    // lenient: open time vocabulary, so "at beach" reads as a time phrase
    v = check("a photo of a <cls_car> at beach", ValidationMode::lenient);
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"time_of_day"});

    v = check("a photo of a <cls_car> on a snowy road at dusk");
    CHECK(v.ok);
    CHECK(v.slots_used ==
          std::set<std::string>{"preposition", "weather", "location", "time_of_day"});
}

TEST_CASE("validation failures carry reasons") {
    CHECK(!check("photo of a <cls_car>").ok);
    CHECK(!check("a picture of a <cls_car>").ok);
    CHECK(!check("a photo of the <cls_car>").ok);

    auto v = check("a photo of a <cls_car> and a <cls_car>");
    CHECK(!v.ok);
    CHECK(v.reason.find("exactly once") != std::string::npos);

    CHECK(!check("a photo of a dog").ok);                      // token missing
    CHECK(!check("a photo of a <cls_car>s").ok);               // token glued to a suffix
    CHECK(!check("a photo of a very old red <cls_car>").ok);   // two words before the token
    CHECK(!check("a photo of a <cls_car> on").ok);             // dangling preposition
    CHECK(!check("a photo of a <cls_car> road").ok);           // scene without preposition
    CHECK(!check("a photo of a <cls_car> on a very foggy bridge").ok);  // overlong scene
    CHECK(!validate_prompt("a photo of a <cls_car>", "", default_grammar(),
                           ValidationMode::strict)
               .ok);
}

TEST_CASE("strict rejects open vocabulary that lenient accepts") {
    const char* text = "a photo of an interesting <cls_car>";
    CHECK(!check(text).ok);
    const auto v = check(text, ValidationMode::lenient);
    CHECK(v.ok);
    CHECK(v.slots_used == std::set<std::string>{"adjective"});

    // lenient still insists on a closed-class preposition
    CHECK(!check("a photo of a <cls_car> driving fast", ValidationMode::lenient).ok);
    // but takes any object noun
    CHECK(check("a photo of a <cls_car> near a volcano", ValidationMode::lenient).ok);
}

TEST_CASE("instruction text carries the template, examples and constraints") {
    const std::string s = build_llm_instruction("car", 10);
    CHECK(s.find("Create prompts for me that have the following structure:") != std::string::npos);
    CHECK(s.find("a photo of a [adjective] <classname>") != std::string::npos);
    CHECK(s.find("'a photo of a red car' (adjective optional)") != std::string::npos);
    CHECK(s.find("'a photo of a car on a road' (location optional)") != std::string::npos);
    CHECK(s.find("'a photo of a car in snow' (weather optional)") != std::string::npos);
    CHECK(s.find("'a photo of a car at night' (time of day optional)") != std::string::npos);
    CHECK(s.find("'a photo of a huge car in a tunnel' (adjective and location optionals)") !=
          std::string::npos);
    CHECK(s.find("'a photo of a green car on a foggy bridge at daytime' (all optionals)") !=
          std::string::npos);
    CHECK(s.find("'a photo of a car' (no optional)") != std::string::npos);
    CHECK(s.find("they should be visual. So don't use something like 'interesting'.") !=
          std::string::npos);
    CHECK(s.find("Also vary the number of optionals that you use.") != std::string::npos);
    CHECK(s.find("Can you give me 10 prompts of this structure for class car please.") !=
          std::string::npos);

    const std::string other = build_llm_instruction("sea gull", 25);
    CHECK(other.find("25 prompts of this structure for class sea gull please.") !=
          std::string::npos);

    CHECK_THROWS_AS(build_llm_instruction("", 10), InputError);
    CHECK_THROWS_AS(build_llm_instruction("car", 0), InputError);
}

TEST_CASE("fallback generation is deterministic, distinct and strict-valid") {
    const auto a = generate_prompts_fallback("car", kToken, 100, 99);
    const auto b = generate_prompts_fallback("car", kToken, 100, 99);
    CHECK(a == b);
    const auto c = generate_prompts_fallback("car", kToken, 100, 100);
    CHECK(a != c);

    std::unordered_set<std::string> texts;
    for (const auto& p : a) {
        CHECK(p.class_label == "car");
        CHECK(p.origin == "fallback");
        CHECK(texts.insert(p.text).second);
        const auto v = check(p.text);
        CHECK(v.ok);
        CHECK(v.slots_used == p.slots_used);
    }
    CHECK(a[0].id == "car-fb-0");
    CHECK(a[99].id == "car-fb-99");
}

TEST_CASE("fallback structure walk starts bare and spreads optional counts") {
    const auto one = generate_prompts_fallback("car", kToken, 1, 7);
    REQUIRE(one.size() == 1);
    CHECK(one[0].text == "a photo of a <cls_car>");
    CHECK(one[0].slots_used.empty());

    const auto two = generate_prompts_fallback("car", kToken, 2, 7);
    CHECK(two[0].slots_used.size() == 0);
    CHECK(two[1].slots_used.size() == 1);

    const auto seven = generate_prompts_fallback("car", kToken, 7, 7);
    std::set<std::size_t> counts;
    for (const auto& p : seven) counts.insert(p.slots_used.size());
    CHECK(counts.size() >= 3);
}

TEST_CASE("fallback refuses when the lexicon cannot supply enough variety") {
    const PromptGrammar tiny{{"red"}, {"on"}, {"foggy"}, {"road"}, {"night"}};
    // ten structurally distinct prompts exist, an eleventh would repeat
    CHECK(generate_prompts_fallback("car", kToken, 10, 1, tiny).size() == 10);
    CHECK_THROWS_AS(generate_prompts_fallback("car", kToken, 11, 1, tiny), InputError);

    CHECK_THROWS_AS(generate_prompts_fallback("car", kToken, 0, 1), InputError);
    CHECK_THROWS_AS(generate_prompts_fallback("car", "", 5, 1), InputError);
    const PromptGrammar broken{{}, {"on"}, {"foggy"}, {"road"}, {"night"}};
    CHECK_THROWS_AS(generate_prompts_fallback("car", kToken, 1, 1, broken), InputError);
}

TEST_CASE("model output parsing strips decorations and keeps valid lines") {
    const std::string raw =
        "Sure! Here are your prompts:\n"
        "1. \"A photo of a red car\"\n"
        "2. A photo of a car at night.\n"
        "3) a photo of a car driving fast\n"
        "- A photo of a blue car on a snowy road\n"
        "* 'a photo of a RED car'\n"
        "\n"
        "That was fun!\n";
    const auto got = parse_llm_response(raw, "car", kToken);
    REQUIRE(got.size() == 3);
    CHECK(got[0].text == "a photo of a red <cls_car>");
    CHECK(got[0].id == "car-llm-0");
    CHECK(got[0].origin == "llm");
    CHECK(got[1].text == "a photo of a <cls_car> at night");
    CHECK(got[2].text == "a photo of a blue <cls_car> on a snowy road");
    CHECK(got[2].slots_used ==
          std::set<std::string>{"adjective", "preposition", "weather", "location"});

    CHECK(parse_llm_response("nothing usable here", "car", kToken).empty());

    // strict parsing drops open-vocabulary lines that lenient keeps
    const std::string edge = "a photo of an interesting car\n";
    CHECK(parse_llm_response(edge, "car", kToken).size() == 1);
    CHECK(parse_llm_response(edge, "car", kToken, default_grammar(), ValidationMode::strict)
              .empty());
}

TEST_CASE("multi-word class names substitute as a unit") {
    const auto got = parse_llm_response("a photo of a Sea Gull at dawn\n", "sea gull", "<cls_gull>");
    REQUIRE(got.size() == 1);
    CHECK(got[0].text == "a photo of a <cls_gull> at dawn");
}

TEST_CASE("request_prompts takes the model's output when it suffices") {
    std::string reply;
    for (int i = 0; i < 10; ++i)
        reply += std::to_string(i + 1) + ". a photo of a car at " +
                 default_grammar().times_of_day[static_cast<std::size_t>(i)] + "\n";
    ScriptedClient client(reply);
    const auto got = request_prompts(client, "car", kToken, 10, 5);
    REQUIRE(got.size() == 10);
    CHECK(client.calls == 1);
    CHECK(client.last_instruction.find("10 prompts of this structure for class car") !=
          std::string::npos);
    for (int i = 0; i < 10; ++i) {
        CHECK(got[static_cast<std::size_t>(i)].id == "car-p" + std::to_string(i));
        CHECK(got[static_cast<std::size_t>(i)].origin == "llm");
    }
}

TEST_CASE("request_prompts tops up a short response from the grammar") {
    std::string reply;
    for (int i = 0; i < 6; ++i)
        reply += "a photo of a car at " +
                 default_grammar().times_of_day[static_cast<std::size_t>(i)] + "\n";
    ScriptedClient client(reply);
    const auto got = request_prompts(client, "car", kToken, 10, 5, default_grammar(), 3, true);
    REQUIRE(got.size() == 10);
    CHECK(client.calls == 3);  // every retry returned the same six lines
    int llm = 0, fallback = 0;
    std::unordered_set<std::string> texts;
    for (const auto& p : got) {
        CHECK(texts.insert(p.text).second);
        (p.origin == "llm" ? llm : fallback)++;
    }
    CHECK(llm == 6);
    CHECK(fallback == 4);
    CHECK(got[0].id == "car-p0");
    CHECK(got[9].id == "car-p9");
}

TEST_CASE("request_prompts degrades to pure fallback when transport dies") {
    DeadClient client;
    const auto got = request_prompts(client, "car", kToken, 10, 5);
    REQUIRE(got.size() == 10);
    CHECK(client.calls == 3);
    const auto expect = generate_prompts_fallback("car", kToken, 10, 5);
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].text == expect[i].text);
        CHECK(got[i].origin == "fallback");
    }
}

TEST_CASE("request_prompts without fallback propagates failure") {
    DeadClient dead;
    CHECK_THROWS_AS(request_prompts(dead, "car", kToken, 10, 5, default_grammar(), 3, false),
                    TransportError);
    CHECK(dead.calls == 3);

    ScriptedClient garbage("no prompts in here");
    CHECK_THROWS_AS(request_prompts(garbage, "car", kToken, 10, 5, default_grammar(), 3, false),
                    InputError);
}

TEST_CASE("prompt files round trip and reject malformed records") {
    const auto prompts = generate_prompts_fallback("car", kToken, 5, 3);
    const auto path = temp_dir() / "prompts.json";
    save_prompts(prompts, path);
    CHECK(load_prompts(path) == prompts);

    auto dup = prompts;
    dup.push_back(prompts[0]);
    CHECK_THROWS_AS(save_prompts(dup, temp_dir() / "dup.json"), InputError);

    auto bad = prompts;
    bad[0].origin = "mystery";
    save_prompts(bad, path);  // origin is only checked on load
    CHECK_THROWS_AS(load_prompts(path), InputError);
}

TEST_CASE("grouping preserves within-class order") {
    std::vector<PromptRecord> mixed;
    auto cars = generate_prompts_fallback("car", "<cls_car>", 3, 1);
    auto dogs = generate_prompts_fallback("dog", "<cls_dog>", 3, 1);
    mixed.push_back(cars[0]);
    mixed.push_back(dogs[0]);
    mixed.push_back(cars[1]);
    mixed.push_back(dogs[1]);
    mixed.push_back(cars[2]);
    mixed.push_back(dogs[2]);
    const auto grouped = group_prompts_by_class(mixed);
    REQUIRE(grouped.size() == 2);
    CHECK(grouped.at("car") == cars);
    CHECK(grouped.at("dog") == dogs);
}
