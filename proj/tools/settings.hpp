#pragma once

// Layered run settings for the command-line tools: built-in defaults, then a
// JSON config file, then command-line flags.

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace ionbeat::cli {

enum class Kind { Real, Integer, Unsigned, Flag, Text };

struct Setting {
    std::string key;  // snake_case; the flag is --kebab-case
    Kind kind;
    nlohmann::json fallback;  // null = unset unless given
    std::string help;
};

class Settings {
public:
    Settings(CLI::App& command, std::vector<Setting> settings);

    /// Defaults, overlaid by the --config file, overlaid by explicit flags.
    nlohmann::json resolve(bool use_file = true) const;

    /// Keys set by the config file or a flag (not just defaulted).
    const std::set<std::string>& explicit_keys() const { return explicit_; }

    const std::string& out() const { return out_; }

private:
    nlohmann::json convert(const Setting& s, const std::string& text) const;

    CLI::App& command_;
    std::vector<Setting> settings_;
    std::map<std::string, std::unique_ptr<std::string>> text_;
    std::map<std::string, CLI::Option*> options_;
    std::string config_path_;
    std::string out_;
    mutable std::set<std::string> explicit_;
};

std::string flag_name(const std::string& key, Kind kind, const nlohmann::json& fallback);

}  // namespace ionbeat::cli
