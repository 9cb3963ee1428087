#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace bae {

/// Independent generator for a named stream under a master seed. Streams
/// with different tags or indices never share state, so e.g. changing the
/// noise indices leaves the training draws untouched.
inline std::mt19937_64 make_stream(std::uint64_t master, std::string_view tag,
                                   std::initializer_list<std::uint64_t> indices = {}) {
    std::vector<std::uint32_t> words;
    words.push_back(static_cast<std::uint32_t>(master));
    words.push_back(static_cast<std::uint32_t>(master >> 32));
    std::uint64_t tag_hash = 14695981039346656037ull;  // FNV-1a
    for (char c : tag) {
        tag_hash ^= static_cast<unsigned char>(c);
        tag_hash *= 1099511628211ull;
    }
    words.push_back(static_cast<std::uint32_t>(tag_hash));
    words.push_back(static_cast<std::uint32_t>(tag_hash >> 32));
    for (std::uint64_t v : indices) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

}  // namespace bae
