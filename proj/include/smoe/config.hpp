#pragma once

// Plain-text `key = value` files. '#' starts a comment; blank lines are ignored.

#include <smoe/error.hpp>

#include <charconv>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

namespace smoe {

inline std::string_view trim(std::string_view s) noexcept
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view text, const std::string& what)
{
    text = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    require(ec == std::errc() && ptr == text.data() + text.size(), ErrorKind::Format,
            what + ": '" + std::string(text) + "' is not a number");
    return v;
}

inline std::size_t parse_size(std::string_view text, const std::string& what)
{
    text = trim(text);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    require(ec == std::errc() && ptr == text.data() + text.size(), ErrorKind::Format,
            what + ": '" + std::string(text) + "' is not a non-negative integer");
    return v;
}

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>")
    {
        KeyValueConfig cfg;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string_view v = line;
            if (const auto hash = v.find('#'); hash != std::string_view::npos)
                v = v.substr(0, hash);
            v = trim(v);
            if (v.empty())
                continue;
            const auto eq = v.find('=');
            require(eq != std::string_view::npos, ErrorKind::Format,
                    source + ":" + std::to_string(lineno) + ": expected 'key = value'");
            const std::string key(trim(v.substr(0, eq)));
            require(!key.empty(), ErrorKind::Format, source + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = std::string(trim(v.substr(eq + 1)));
        }
        return cfg;
    }

    static KeyValueConfig parse_string(const std::string& text)
    {
        std::istringstream in(text);
        return parse(in);
    }

    static KeyValueConfig load(const std::string& path)
    {
        std::ifstream in(path);
        require(static_cast<bool>(in), ErrorKind::Io, "cannot open config '" + path + "'");
        return parse(in, path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::optional<std::string> get(const std::string& key) const
    {
        used_.insert(key);
        const auto it = values_.find(key);
        if (it == values_.end())
            return std::nullopt;
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const { return get(key).value_or(fallback); }

    double get_double(const std::string& key, double fallback) const
    {
        const auto v = get(key);
        return v ? parse_double(*v, key) : fallback;
    }

    std::size_t get_size(const std::string& key, std::size_t fallback) const
    {
        const auto v = get(key);
        return v ? parse_size(*v, key) : fallback;
    }

    bool get_bool(const std::string& key, bool fallback) const
    {
        const auto v = get(key);
        if (!v)
            return fallback;
        if (*v == "true" || *v == "1" || *v == "yes")
            return true;
        if (*v == "false" || *v == "0" || *v == "no")
            return false;
        fail(ErrorKind::Format, key + ": '" + *v + "' is not a boolean");
    }

    /// Keys present in the file that no getter has asked for.
    std::set<std::string> unused_keys() const
    {
        std::set<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k))
                out.insert(k);
        return out;
    }

    const std::map<std::string, std::string>& values() const noexcept { return values_; }

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

} // namespace smoe
