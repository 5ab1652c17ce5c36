#include "settings.hpp"

#include <algorithm>
#include <fstream>

#include "ionbeat/errors.hpp"

namespace ionbeat::cli {

namespace {

std::string kebab(std::string s) {
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
}

bool matches(Kind kind, const nlohmann::json& v) {
    switch (kind) {
    case Kind::Real: return v.is_number();
    case Kind::Integer: return v.is_number_integer();
    case Kind::Unsigned: return v.is_number_unsigned();
    case Kind::Flag: return v.is_boolean();
    case Kind::Text: return v.is_string();
    }
    return false;
}

const char* kind_name(Kind kind) {
    switch (kind) {
    case Kind::Real: return "a number";
    case Kind::Integer: return "an integer";
    case Kind::Unsigned: return "a non-negative integer";
    case Kind::Flag: return "true or false";
    case Kind::Text: return "a string";
    }
    return "";
}

}  // namespace

std::string flag_name(const std::string& key, Kind kind, const nlohmann::json& fallback) {
    if (kind == Kind::Flag && fallback.is_boolean() && fallback.get<bool>())
        return "--no-" + kebab(key);
    return "--" + kebab(key);
}

Settings::Settings(CLI::App& command, std::vector<Setting> settings)
    : command_(command), settings_(std::move(settings)) {
    command_.add_option("--config", config_path_, "JSON file with settings (flags take precedence)");
    command_.add_option("--out", out_, "Output file (default: standard output)");
    for (const auto& s : settings_) {
        const std::string flag = flag_name(s.key, s.kind, s.fallback);
        if (s.kind == Kind::Flag) {
            options_[s.key] = command_.add_flag(flag, s.help);
            continue;
        }
        auto& slot = text_[s.key] = std::make_unique<std::string>();
        std::string help = s.help;
        if (!s.fallback.is_null()) help += " [" + s.fallback.dump() + "]";
        options_[s.key] = command_.add_option(flag, *slot, help);
    }
}

nlohmann::json Settings::convert(const Setting& s, const std::string& text) const {
    try {
        std::size_t used = 0;
        switch (s.kind) {
        case Kind::Real: {
            const double v = std::stod(text, &used);
            if (used != text.size()) break;
            return v;
        }
        case Kind::Integer: {
            const long long v = std::stoll(text, &used);
            if (used != text.size()) break;
            return v;
        }
        case Kind::Unsigned: {
            if (!text.empty() && text[0] == '-') break;
            const unsigned long long v = std::stoull(text, &used);
            if (used != text.size()) break;
            return v;
        }
        case Kind::Text: return text;
        case Kind::Flag: break;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError(s.key, std::string("expected ") + kind_name(s.kind) + ", got '" + text + "'");
}

nlohmann::json Settings::resolve(bool use_file) const {
    explicit_.clear();
    nlohmann::json out = nlohmann::json::object();
    for (const auto& s : settings_) out[s.key] = s.fallback;

    if (use_file && !config_path_.empty()) {
        std::ifstream in(config_path_);
        if (!in) throw ConfigError("config", "cannot open " + config_path_);
        nlohmann::json file;
        try {
            file = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("config", std::string("invalid JSON: ") + e.what());
        }
        if (!file.is_object()) throw ConfigError("config", "top level must be an object");
        for (const auto& [key, value] : file.items()) {
            const auto it = std::find_if(settings_.begin(), settings_.end(),
                                         [&](const Setting& s) { return s.key == key; });
            if (it == settings_.end()) throw ConfigError(key, "unknown configuration key");
            if (!value.is_null() && !matches(it->kind, value))
                throw ConfigError(key, std::string("expected ") + kind_name(it->kind));
            out[key] = value;
            explicit_.insert(key);
        }
    }

    for (const auto& s : settings_) {
        const CLI::Option* opt = options_.at(s.key);
        if (opt->count() == 0) continue;
        if (s.kind == Kind::Flag)
            out[s.key] = !(s.fallback.is_boolean() && s.fallback.get<bool>());
        else
            out[s.key] = convert(s, *text_.at(s.key));
        explicit_.insert(s.key);
    }
    return out;
}

}  // namespace ionbeat::cli
