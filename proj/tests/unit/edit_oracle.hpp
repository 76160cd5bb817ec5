// Copyright (C) 2026 The piw Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive edit-distance oracle for short word sequences.

#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

namespace piw::testing {

using Words = std::vector<std::string>;

inline std::vector<Words> all_sequences(const Words &alphabet, std::size_t max_len) {
    std::vector<Words> out{{}};
    for (std::size_t start = 0; start < out.size(); ++start) {
        if (out[start].size() == max_len) {
            continue;
        }
        for (const auto &w : alphabet) {
            Words next = out[start];
            next.push_back(w);
            out.push_back(next);
        }
    }
    return out;
}

inline std::string join(const Words &w) {
    std::string s;
    for (const auto &x : w) {
        s += (s.empty() ? "" : " ") + x;
    }
    return s;
}

// Fewest single-word edits from `from` to every sequence of length <= max_len,
// found by breadth-first search over edit scripts. Deleting first, then
// substituting, then inserting never exceeds the longer endpoint, so the
// length cap does not cut off any optimal script.
inline std::unordered_map<std::string, std::size_t> bfs_distances(const Words &from, const Words &alphabet,
                                                            std::size_t max_len) {
    std::unordered_map<std::string, std::size_t> dist{{join(from), 0}};
    std::deque<Words> queue{from};
    while (!queue.empty()) {
        const Words cur = queue.front();
        queue.pop_front();
        const std::size_t d = dist.at(join(cur));
        std::vector<Words> next;
        for (std::size_t i = 0; i < cur.size(); ++i) {
            Words del = cur;
            del.erase(del.begin() + static_cast<std::ptrdiff_t>(i));
            next.push_back(del);
            for (const auto &w : alphabet) {
                if (w != cur[i]) {
                    Words sub = cur;
                    sub[i] = w;
                    next.push_back(sub);
                }
            }
        }
        if (cur.size() < max_len) {
            for (std::size_t i = 0; i <= cur.size(); ++i) {
                for (const auto &w : alphabet) {
                    Words ins = cur;
                    ins.insert(ins.begin() + static_cast<std::ptrdiff_t>(i), w);
                    next.push_back(ins);
                }
            }
        }
        for (auto &n : next) {
            if (dist.emplace(join(n), d + 1).second) {
                queue.push_back(std::move(n));
            }
        }
    }
    return dist;
}

} // namespace piw::testing
