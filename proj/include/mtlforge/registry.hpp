#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtlforge {

enum class FamilyId { CLS, CMNS, NLI, RC, RC_PLUS, SUM };

inline constexpr std::array<FamilyId, 6> kAllFamilies = {
    FamilyId::CLS, FamilyId::CMNS, FamilyId::NLI, FamilyId::RC, FamilyId::RC_PLUS, FamilyId::SUM};

/// Symbolic name used in files ("RC_PLUS").
std::string_view to_string(FamilyId f);
/// Name used in tables ("RC+").
std::string_view display_name(FamilyId f);
/// Accepts either spelling, case-insensitive.
FamilyId parse_family(std::string_view s);
inline std::size_t family_index(FamilyId f) { return static_cast<std::size_t>(f); }

struct PromptField {
    std::string label;     // e.g. "question:"
    std::string field_key; // key in Example::fields
    bool operator==(const PromptField&) const = default;
};

struct FormatTemplate {
    std::vector<PromptField> inputs;
    std::string target_key;

    /// Throws if a label is not a lowercase word followed by a colon or the
    /// template has no input fields.
    void validate() const;
    /// Every key an example must carry (inputs then target), without "id".
    std::vector<std::string> required_keys() const;
    bool operator==(const FormatTemplate&) const = default;
};

/// Per-family prompt vocabulary. CLS: text -> label; NLI: premise, hypothesis
/// -> label; RC and RC+: question, context -> answer; CMNS: question, options
/// -> answer; SUM: document -> summary.
FormatTemplate default_template(FamilyId f);

struct TaskSpec {
    std::string name;
    FamilyId family = FamilyId::CLS;
    std::size_t size = 0;
    FormatTemplate format;
    std::filesystem::path source_path;
};

struct Example {
    std::string id;
    std::map<std::string, std::string> fields;
    bool operator==(const Example&) const = default;
};

struct TextPair {
    std::string input_text;
    std::string target_text;
    std::string task_name;
    bool operator==(const TextPair&) const = default;
};

class Registry {
public:
    /// Rejects duplicate names and invalid templates.
    void register_task(TaskSpec spec);

    bool contains(std::string_view name) const;
    const TaskSpec& task(std::string_view name) const;
    /// Registration order.
    const std::vector<TaskSpec>& tasks() const { return tasks_; }
    /// Tasks of one family in registration order.
    std::vector<const TaskSpec*> tasks_in(FamilyId f) const;
    /// Task names of the given families, family by family (enum order), each
    /// family in registration order.
    std::vector<std::string> task_names_for(std::span<const FamilyId> families) const;

    /// Reads the task's source_path and stores its examples.
    void load(std::string_view name);
    void load_all();
    /// Installs examples directly (fixtures); size follows the count.
    void set_examples(std::string_view name, std::vector<Example> examples);
    bool loaded(std::string_view name) const;
    const std::vector<Example>& examples(std::string_view name) const;

    /// SHA-256 over task metadata and example contents in registration order.
    /// Dataset locations are excluded so relocated copies hash equally.
    std::string digest() const;

private:
    std::size_t index_of(std::string_view name) const;

    std::vector<TaskSpec> tasks_;
    std::vector<std::vector<Example>> examples_;
    std::vector<bool> loaded_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

/// Reads line-delimited JSON records. Each non-blank line must be an object
/// of string values carrying "id" and every key of spec.format. Sets
/// spec.size to the number of records.
std::vector<Example> load_dataset(const std::filesystem::path& path, TaskSpec& spec);

void write_dataset(const std::filesystem::path& path, std::span<const Example> examples);

/// "label value" segments in template order joined by single spaces.
TextPair format_example(const Example& example, const FormatTemplate& format,
                        std::string_view task_name = {});

struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Maps text to token byte ranges, in order.
using Tokenizer = std::function<std::vector<TokenSpan>(std::string_view)>;

std::vector<TokenSpan> whitespace_tokenize(std::string_view text);

struct TruncationLimits {
    std::size_t max_input = 0;
    std::size_t max_target = 0;
};

inline constexpr TruncationLimits kPrefinetuneLimits{512, 128};
inline constexpr TruncationLimits kFinetuneLimits{1024, 512};

/// Keeps the longest token prefix of each side within its limit. Prompt
/// labels count against the input budget. Text within the limit is returned
/// unchanged; truncated text spans from the first kept token to the end of
/// the last kept token.
TextPair truncate_pair(const TextPair& pair, TruncationLimits limits,
                       const Tokenizer& tokenizer = whitespace_tokenize);

/// Seeded pseudo-text examples that satisfy the family's default template.
std::vector<Example> synth_fixture(FamilyId family, std::size_t n, std::uint64_t seed);

struct CatalogEntry {
    std::string name;
    FamilyId family;
};

/// The 18-task, six-family taxonomy (three tasks per family).
const std::vector<CatalogEntry>& standard_catalog();

/// Registry over the standard catalog filled with synthetic fixtures. Task k
/// (0-based) of each family gets base_size * (k + 1) examples so that
/// proportional and equal mixing differ.
Registry synthetic_registry(std::uint64_t seed, std::size_t base_size);

/// Registry manifest: {"tasks": [{"name", "family", "path", "template", "target"}]}.
/// "template" is a list of [label, field_key] pairs; "template" and "target"
/// default to the family template. Relative paths resolve against the
/// manifest's directory. All datasets are loaded.
Registry load_registry_manifest(const std::filesystem::path& path);
void write_registry_manifest(const std::filesystem::path& path, const Registry& registry);

} // namespace mtlforge
