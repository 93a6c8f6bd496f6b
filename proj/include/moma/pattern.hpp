// Layer-pattern DSL.
//
// Grammar:   pattern := group+        group := '[' sym+ ']' count
//            sym     := 'T' | 'M'     count := positive integer
//
// Expansion walks each group unit `count` times. A 'T' is a plain transformer
// layer; the first 'M' right after a 'T' within the same group unit attaches
// a Divide+Modulate adapter to that layer; any other 'M' is a standalone SSM
// layer (decoder form, residual on the scale branch). The expansion must not
// begin with 'M' and the number of 'T's must equal the backbone depth.
//
// Examples at depth 12: "[TM]12" -> 12 modulated layers; "[T]12[M]12" -> 12
// plain layers then 12 standalone SSM layers; "[T]6[TMM]6" -> 6 plain, then
// 6 x (modulated + standalone); "[TTMM]6" -> 6 x (plain, modulated,
// standalone).
#pragma once

#include <string>
#include <vector>

#include "moma/common.hpp"

namespace moma {

enum class LayerKind { Plain, Modulated, StandaloneSsm };

struct PatternGroup {
    std::string unit;  // symbols inside the brackets
    size_t count = 0;
    bool operator==(const PatternGroup&) const = default;
};

struct LayerPattern {
    std::vector<PatternGroup> groups;
    std::vector<LayerKind> layers;

    size_t transformer_count() const {
        size_t n = 0;
        for (LayerKind k : layers)
            if (k != LayerKind::StandaloneSsm) ++n;
        return n;
    }
    size_t ssm_count() const {
        size_t n = 0;
        for (LayerKind k : layers)
            if (k != LayerKind::Plain) ++n;
        return n;
    }
    bool operator==(const LayerPattern&) const = default;
};

inline std::string render_pattern(const LayerPattern& p) {
    std::string out;
    for (const auto& g : p.groups) out += "[" + g.unit + "]" + std::to_string(g.count);
    return out;
}

// Character offset of a group's unit within the normalized rendering; used
// only for error positions.
inline size_t render_pattern_prefix_length(const LayerPattern& p, const PatternGroup& g) {
    size_t off = 0;
    for (const auto& other : p.groups) {
        off += 1;  // '['
        if (&other == &g) return off;
        off += other.unit.size() + 1 + std::to_string(other.count).size();
    }
    return off;
}

inline LayerPattern parse_pattern(const std::string& src, size_t l_target) {
    LayerPattern p;
    size_t i = 0;
    const auto pos = [&]() { return i + 1; };  // 1-based for messages
    while (i < src.size()) {
        if (src[i] == ' ') {
            ++i;
            continue;
        }
        if (src[i] != '[') throw PatternParseError("expected '['", pos());
        ++i;
        PatternGroup g;
        while (i < src.size() && src[i] != ']') {
            if (src[i] != 'T' && src[i] != 'M')
                throw PatternParseError(std::string("unexpected symbol '") + src[i] + "', expected T or M",
                                        pos());
            g.unit.push_back(src[i]);
            ++i;
        }
        if (i == src.size()) throw PatternParseError("unterminated group, expected ']'", pos());
        if (g.unit.empty()) throw PatternParseError("empty group", pos());
        ++i;  // skip ']'
        size_t digits = 0;
        size_t count = 0;
        while (i < src.size() && src[i] >= '0' && src[i] <= '9') {
            count = count * 10 + static_cast<size_t>(src[i] - '0');
            ++digits;
            ++i;
        }
        if (digits == 0 || count == 0) throw PatternParseError("expected positive repeat count", pos());
        g.count = count;
        p.groups.push_back(std::move(g));
    }
    if (p.groups.empty()) throw PatternParseError("empty pattern", 1);

    // Expand. Track positions so errors point into the source string.
    bool first_symbol = true;
    for (const auto& g : p.groups) {
        const size_t unit_pos = render_pattern_prefix_length(p, g);
        for (size_t rep = 0; rep < g.count; ++rep) {
            bool prev_was_host = false;  // a 'T' still waiting for its first 'M'
            for (size_t k = 0; k < g.unit.size(); ++k) {
                const char sym = g.unit[k];
                if (sym == 'T') {
                    p.layers.push_back(LayerKind::Plain);
                    prev_was_host = true;
                } else {
                    if (first_symbol)
                        throw PatternParseError("modulation without host layer", unit_pos + k + 1);
                    if (prev_was_host) {
                        p.layers.back() = LayerKind::Modulated;
                        prev_was_host = false;
                    } else {
                        p.layers.push_back(LayerKind::StandaloneSsm);
                    }
                }
                first_symbol = false;
            }
        }
    }
    if (p.transformer_count() != l_target)
        throw PatternParseError("pattern expands to " + std::to_string(p.transformer_count()) +
                                    " transformer layers, backbone depth is " + std::to_string(l_target),
                                src.size());
    return p;
}

}  // namespace moma
