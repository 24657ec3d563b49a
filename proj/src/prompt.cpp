#include "artifact/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace artifact {

namespace {

using nlohmann::json;

std::string trimmed(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

void render_fields(std::ostringstream& os, const std::string& name,
                   const std::string& time_period, const std::string& description,
                   const std::string& size_text) {
    os << "Name: " << name << "\n";
    os << "Time Period: " << time_period << "\n";
    os << "Description: " << description << "\n";
    os << "Size: " << size_text << "\n";
}

void render_attributes(std::ostringstream& os, const ExpertAttributes& a) {
    os << "Material: " << a.material << "\n";
    os << "Type: " << a.type << "\n";
    os << "Type Definition: " << a.type_definition << "\n";
    os << "Shape: " << a.shape << "\n";
    os << "Pattern: " << a.pattern << "\n";
}

json attributes_to_json(const ExpertAttributes& a) {
    return {{"name", a.name},
            {"material", a.material},
            {"time_period", a.time_period},
            {"type", a.type},
            {"type_definition", a.type_definition},
            {"shape", a.shape},
            {"pattern", a.pattern},
            {"size", a.size}};
}

ExpertAttributes attributes_from_json(const json& j) {
    ExpertAttributes a;
    a.name = j.value("name", "");
    a.material = j.value("material", "");
    a.time_period = j.value("time_period", "");
    a.type = j.value("type", "");
    a.type_definition = j.value("type_definition", "");
    a.shape = j.value("shape", "");
    a.pattern = j.value("pattern", "");
    a.size = j.value("size", "");
    return a;
}

}  // namespace

const std::array<const char*, 5> ExpertAttributes::kDerivedFields = {
    "material", "type", "type_definition", "shape", "pattern"};

bool ExpertAttributes::complete() const {
    return !trimmed(material).empty() && !trimmed(type).empty() &&
           !trimmed(type_definition).empty() && !trimmed(shape).empty() &&
           !trimmed(pattern).empty();
}

std::vector<std::string> ExpertAttributes::ordered_values() const {
    return {name, material, time_period, type, type_definition, shape, pattern, size};
}

void QueryTemplate::validate() const {
    if (examples.size() != 2)
        throw std::runtime_error("template requires exactly two in-context examples");
    if (trimmed(task_statement).empty()) throw std::runtime_error("template task statement empty");
    for (const auto& ex : examples) {
        bool museum_ok = !trimmed(ex.attributes.name).empty() &&
                         !trimmed(ex.attributes.time_period).empty() &&
                         !trimmed(ex.attributes.size).empty();
        if (!ex.attributes.complete() || !museum_ok)
            throw std::runtime_error("template example incomplete");
    }
}

QueryTemplate load_query_template(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read template: " + path);
    json j = json::parse(in);
    QueryTemplate t;
    t.task_statement = j.at("task_statement").get<std::string>();
    for (const auto& e : j.at("examples")) {
        TemplateExample ex;
        ex.name = e.at("name").get<std::string>();
        ex.time_period = e.at("time_period").get<std::string>();
        ex.description = e.at("description").get<std::string>();
        ex.size_text = e.at("size_text").get<std::string>();
        ex.attributes = attributes_from_json(e.at("attributes"));
        t.examples.push_back(std::move(ex));
    }
    return t;
}

void save_query_template(const std::string& path, const QueryTemplate& tmpl) {
    json j;
    j["task_statement"] = tmpl.task_statement;
    j["examples"] = json::array();
    for (const auto& ex : tmpl.examples) {
        j["examples"].push_back({{"name", ex.name},
                                 {"time_period", ex.time_period},
                                 {"description", ex.description},
                                 {"size_text", ex.size_text},
                                 {"attributes", attributes_to_json(ex.attributes)}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write template: " + path);
    out << j.dump(2) << "\n";
}

std::string render_query(const ArtifactRecord& record, const QueryTemplate& tmpl) {
    tmpl.validate();
    if (trimmed(record.description).empty())
        throw std::runtime_error("record has empty description: " + record.id);

    std::ostringstream os;
    os << tmpl.task_statement << "\n" << kQuerySeparator << "\n";
    for (const auto& ex : tmpl.examples) {
        render_fields(os, ex.name, ex.time_period, ex.description, ex.size_text);
        render_attributes(os, ex.attributes);
        os << kQuerySeparator << "\n";
    }
    render_fields(os, record.name, record.time_period, record.description, record.size_text);
    os << "Material:\nType:\nType Definition:\nShape:\nPattern:\n" << kQuerySeparator << "\n";
    return os.str();
}

ExpertAttributes parse_response(const std::string& raw_llm_text, const ArtifactRecord& record) {
    ExpertAttributes attrs;
    attrs.name = record.name;
    attrs.time_period = record.time_period;
    attrs.size = record.size_text;

    std::string* current = nullptr;
    std::istringstream in(raw_llm_text);
    std::string line;
    while (std::getline(in, line)) {
        size_t colon = line.find(':');
        std::string* target = nullptr;
        if (colon != std::string::npos) {
            std::string label = trimmed(lower(line.substr(0, colon)));
            if (label == "material") target = &attrs.material;
            else if (label == "type") target = &attrs.type;
            else if (label == "type definition") target = &attrs.type_definition;
            else if (label == "shape") target = &attrs.shape;
            else if (label == "pattern") target = &attrs.pattern;
        }
        if (target) {
            *target = trimmed(line.substr(colon + 1));
            current = target;
        } else if (current && !trimmed(line).empty()) {
            // Continuation of a wrapped value.
            if (!current->empty()) *current += " ";
            *current += trimmed(line);
        } else {
            current = nullptr;
        }
    }
    return attrs;
}

std::string assemble_prompt(const ExpertAttributes& attrs, const std::string& sep) {
    if (!attrs.complete()) throw std::runtime_error("cannot assemble incomplete attributes");
    auto values = attrs.ordered_values();
    std::string prompt;
    for (size_t i = 0; i < values.size(); ++i) {
        if (i) prompt += sep;
        prompt += values[i];
    }
    return prompt;
}

std::vector<std::string> split_prompt(const std::string& prompt, const std::string& sep) {
    if (sep.empty()) throw std::invalid_argument("split_prompt: empty separator");
    std::vector<std::string> parts;
    size_t pos = 0;
    while (true) {
        size_t next = prompt.find(sep, pos);
        if (next == std::string::npos) {
            parts.push_back(prompt.substr(pos));
            break;
        }
        parts.push_back(prompt.substr(pos, next - pos));
        pos = next + sep.size();
    }
    return parts;
}

}  // namespace artifact
