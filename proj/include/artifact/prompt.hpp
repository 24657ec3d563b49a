#pragma once

#include <array>
#include <string>
#include <vector>

#include "artifact/corpus.hpp"

namespace artifact {

// Default delimiter between prompt attributes: a fullwidth comma.
inline constexpr const char* kDefaultSep = "\xEF\xBC\x8C";  // "，"

// Separator between the parts of a knowledge-base query.
inline constexpr const char* kQuerySeparator = "###";

// The eight attributes that pin an artifact's visual form. name, time_period
// and size come verbatim from the museum record; the other five are filled
// by the knowledge-base model.
struct ExpertAttributes {
    std::string name;
    std::string material;
    std::string time_period;
    std::string type;
    std::string type_definition;
    std::string shape;
    std::string pattern;
    std::string size;

    // The five model-filled fields, in prompt order.
    static const std::array<const char*, 5> kDerivedFields;

    // Complete when every model-filled field is non-empty after trimming.
    bool complete() const;

    // All eight values in prompt order.
    std::vector<std::string> ordered_values() const;
};

struct TemplateExample {
    // Source text the attributes were written from.
    std::string name;
    std::string time_period;
    std::string description;
    std::string size_text;
    ExpertAttributes attributes;
};

struct QueryTemplate {
    std::string task_statement;
    std::vector<TemplateExample> examples;  // exactly two

    void validate() const;  // throws on missing/incomplete examples
};

QueryTemplate load_query_template(const std::string& path);
void save_query_template(const std::string& path, const QueryTemplate& tmpl);

// Renders the three-part query: task statement, the two worked examples,
// then the target record with the five derived fields left blank. Parts are
// joined by "###" and the query ends with a trailing "###" marking where the
// completion starts, so a rendered query always carries exactly four
// separator occurrences.
std::string render_query(const ArtifactRecord& record, const QueryTemplate& tmpl);

// Extracts the five model-filled fields from labeled lines ("Material: ...").
// Museum fields come from the record, never from the response. Missing
// labels leave fields empty; the result may be incomplete but parsing never
// fails.
ExpertAttributes parse_response(const std::string& raw_llm_text, const ArtifactRecord& record);

// Joins the eight attribute values in order with `sep`. Throws
// "cannot assemble incomplete attributes" unless attrs.complete().
std::string assemble_prompt(const ExpertAttributes& attrs, const std::string& sep = kDefaultSep);

// Splits a prompt back into fields on `sep` (exact byte match).
std::vector<std::string> split_prompt(const std::string& prompt,
                                      const std::string& sep = kDefaultSep);

}  // namespace artifact
