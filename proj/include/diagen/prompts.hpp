#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace diagen {

/// Slot lexicon for the prompt grammar. Every list must be nonempty and no
/// entry may contain a class token placeholder.
struct PromptGrammar {
    std::vector<std::string> adjectives;
    std::vector<std::string> prepositions;
    std::vector<std::string> weathers;
    std::vector<std::string> locations;
    std::vector<std::string> times_of_day;
};

/// Shipped lexicon: visual adjectives only, at least 15 entries per slot.
const PromptGrammar& default_grammar();

struct PromptRecord {
    std::string id;
    std::string class_label;
    std::string text;                    // contains the class token exactly once
    std::set<std::string> slots_used;    // subset of the five slot names
    std::string origin;                  // "llm" or "fallback"

    bool operator==(const PromptRecord&) const = default;
};

enum class ValidationMode { strict, lenient };

struct PromptValidation {
    bool ok = false;
    std::set<std::string> slots_used;
    std::string reason;  // set when !ok
};

/// Structural check against the template
///   a|an photo-prefix [adjective] TOKEN [preposition [article] [weather] location] [at time]
/// Strict mode additionally requires every slot word to come from the
/// grammar's lists; lenient mode accepts open vocabulary but still requires a
/// closed-class preposition to open the scene phrase. Failures are values.
PromptValidation validate_prompt(std::string_view text, std::string_view token,
                                 const PromptGrammar& grammar, ValidationMode mode);

/// Instruction for an external text-to-text model, with {num_prompts} and
/// {name} substituted. The wording, the seven worked examples, and the
/// visual-adjective constraint are fixed: they are the operation's contract.
std::string build_llm_instruction(const std::string& class_label, int num_prompts);

/// Deterministic grammar realization: exactly num_prompts distinct prompts
/// for one class. The first prompt is always the bare skeleton, and the first
/// ten walk structurally distinct slot combinations so optional counts vary
/// (at least {0,1} from two prompts on, three distinct counts from seven).
std::vector<PromptRecord> generate_prompts_fallback(const std::string& class_label,
                                                    const std::string& token, int num_prompts,
                                                    std::uint64_t seed,
                                                    const PromptGrammar& grammar = default_grammar());

/// Extracts candidate lines from free-form model output (numbered, bulleted,
/// or quoted), lowercases them, substitutes the class name with the token,
/// and keeps the ones that validate. An empty result is a value, not an error.
std::vector<PromptRecord> parse_llm_response(const std::string& raw, const std::string& class_label,
                                             const std::string& token,
                                             const PromptGrammar& grammar = default_grammar(),
                                             ValidationMode mode = ValidationMode::lenient);

class TextToTextClient {
public:
    virtual ~TextToTextClient() = default;
    /// Returns the raw completion text. Throws TransportError on failure.
    virtual std::string complete(const std::string& instruction, std::uint64_t seed) = 0;
};

/// Asks the client for prompts, retrying up to `retries` completions, and
/// tops up from the fallback generator so exactly num_prompts come back.
/// With allow_fallback = false a transport failure propagates and an
/// undersized response is an input error. Final ids are positional:
/// "<class>-p0" .. "<class>-p<n-1>".
std::vector<PromptRecord> request_prompts(TextToTextClient& client, const std::string& class_label,
                                          const std::string& token, int num_prompts,
                                          std::uint64_t seed,
                                          const PromptGrammar& grammar = default_grammar(),
                                          int retries = 3, bool allow_fallback = true);

void save_prompts(const std::vector<PromptRecord>& prompts, const std::filesystem::path& path);
std::vector<PromptRecord> load_prompts(const std::filesystem::path& path);

/// Groups by class_label preserving file order within each class.
std::map<std::string, std::vector<PromptRecord>> group_prompts_by_class(
    const std::vector<PromptRecord>& prompts);

}  // namespace diagen
