#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "hanguard/policy.hpp"

// Line-oriented text form shared by policy files, update deltas, topology files and scenario
// parameter files: `#` comments, one record per line, `key=value` tokens, comma lists.
namespace hanguard::policy {

class TextFormatError : public ParseError {
public:
    TextFormatError(std::size_t line, const std::string& what)
        : ParseError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// One tokenized record line. `name` is the optional positional token after the kind
// (`role Admin ...`, `domain Home ...`).
struct RecordLine {
    std::size_t number = 0;
    std::string kind;
    std::string name;
    std::map<std::string, std::string, std::less<>> fields;
};

std::vector<RecordLine> tokenize_records(std::string_view text);

// Consumes fields of a RecordLine; finish() rejects any key that was not asked for.
class FieldReader {
public:
    explicit FieldReader(const RecordLine& line) : line_(line) {}

    const std::string& required(std::string_view key);
    std::optional<std::string> optional(std::string_view key);
    bool flag(std::string_view key, bool fallback);
    std::set<std::string> list(std::string_view key);
    [[noreturn]] void fail(const std::string& what) const;
    void finish() const;

private:
    const RecordLine& line_;
    std::set<std::string, std::less<>> used_;
};

Policy parse_policy(std::string_view text);
std::string format_policy(const Policy& policy);

PolicyUpdate parse_update(std::string_view text);
std::string format_update(const PolicyUpdate& update);

struct Topology {
    std::vector<PhoneSpec> phones;
    std::vector<DeviceSpec> devices;
    std::vector<AppRecord> apps;
};

// Same record syntax; phones may give `password=` instead of a precomputed `cred=`.
Topology parse_topology(std::string_view text);

}  // namespace hanguard::policy
