#pragma once

// Reference for topic matching: a filter matches exactly the topics obtained
// by expanding its wildcards over a small finite level alphabet.

#include <functional>
#include <set>
#include <string>
#include <vector>

namespace twinbench::mqtt::testing {

inline const std::vector<std::string> topic_levels{"", "a", "b", "$s"};
inline const std::vector<std::string> filter_levels{"", "a", "b", "+", "#"};
inline constexpr std::size_t max_levels = 4;

inline std::string join(const std::vector<std::string>& levels)
{
    std::string out;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        out += (i ? "/" : "") + levels[i];
    }
    return out;
}

inline void all_sequences(const std::vector<std::string>& alphabet, std::size_t max_len,
                   const std::function<void(const std::vector<std::string>&)>& visit)
{
    std::vector<std::string> cur;
    std::function<void()> rec = [&] {
        if (!cur.empty()) {
            visit(cur);
        }
        if (cur.size() == max_len) {
            return;
        }
        for (const auto& l : alphabet) {
            cur.push_back(l);
            rec();
            cur.pop_back();
        }
    };
    rec();
}

// Every topic (up to max_levels) a filter can generate, found by expanding the
// wildcards over the finite level alphabet.
inline std::set<std::string> expand(const std::vector<std::string>& filter)
{
    std::set<std::string> out;
    std::vector<std::string> cur;
    std::function<void(std::size_t)> rec = [&](std::size_t i) {
        if (i == filter.size()) {
            if (!cur.empty() && !join(cur).empty()) {
                out.insert(join(cur));
            }
            return;
        }
        if (filter[i] == "#") {
            const auto base = cur.size();
            rec(filter.size()); // zero extra levels: the parent topic
            all_sequences(topic_levels, max_levels - base, [&](const std::vector<std::string>& tail) {
                auto full = cur;
                full.insert(full.end(), tail.begin(), tail.end());
                if (!join(full).empty()) {
                    out.insert(join(full));
                }
            });
            return;
        }
        if (filter[i] == "+") {
            for (const auto& l : topic_levels) {
                cur.push_back(l);
                rec(i + 1);
                cur.pop_back();
            }
            return;
        }
        cur.push_back(filter[i]);
        rec(i + 1);
        cur.pop_back();
    };
    rec(0);
    if (filter.front() == "+" || filter.front() == "#") {
        std::erase_if(out, [](const std::string& t) { return t.front() == '$'; });
    }
    return out;
}


/// Runs `check(filter, topic, expected)` for every valid filter and topic of up
/// to max_levels levels. Returns the number of filters visited.
inline std::size_t for_each_topic_pair(
    const std::function<void(const std::string&, const std::string&, bool)>& check)
{
    std::vector<std::string> topics;
    all_sequences(topic_levels, max_levels, [&](const std::vector<std::string>& t) {
        if (!join(t).empty()) {
            topics.push_back(join(t));
        }
    });
    std::size_t filters = 0;
    all_sequences(filter_levels, max_levels, [&](const std::vector<std::string>& f) {
        for (std::size_t i = 0; i + 1 < f.size(); ++i) {
            if (f[i] == "#") {
                return;
            }
        }
        const auto filter = join(f);
        if (filter.empty()) {
            return;
        }
        const auto expected = expand(f);
        ++filters;
        for (const auto& t : topics) {
            check(filter, t, expected.contains(t));
        }
    });
    return filters;
}

} // namespace twinbench::mqtt::testing
