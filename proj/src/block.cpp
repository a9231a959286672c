#include "evoflow/block.hpp"

#include <cstdio>

#include "evoflow/errors.hpp"

namespace evoflow {

std::vector<FencedBlock> find_fenced_blocks(std::string_view text) {
    std::vector<FencedBlock> blocks;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t open = text.find("```", pos);
        if (open == std::string_view::npos)
            break;
        // a fence must start a line
        if (open != 0 && text[open - 1] != '\n') {
            pos = open + 3;
            continue;
        }
        std::size_t eol = text.find('\n', open);
        if (eol == std::string_view::npos)
            break;
        std::string tag(text.substr(open + 3, eol - open - 3));
        while (!tag.empty() && (tag.back() == '\r' || tag.back() == ' '))
            tag.pop_back();
        std::size_t body_start = eol + 1;
        std::size_t close = body_start;
        bool found = false;
        while (close < text.size()) {
            std::size_t c = text.find("```", close);
            if (c == std::string_view::npos)
                break;
            if (c == 0 || text[c - 1] == '\n') {
                close = c;
                found = true;
                break;
            }
            close = c + 3;
        }
        if (!found)
            break;
        blocks.push_back(FencedBlock{tag, std::string(text.substr(body_start, close - body_start)),
                                     body_start});
        pos = close + 3;
    }
    return blocks;
}

Json parse_tagged_block(std::string_view text, std::string_view tag) {
    const FencedBlock* match = nullptr;
    auto blocks = find_fenced_blocks(text);
    for (const auto& b : blocks) {
        if (b.tag != tag)
            continue;
        if (match)
            throw ParseError("more than one ```" + std::string(tag) + " block", b.offset);
        match = &b;
    }
    if (!match)
        throw ParseError("no ```" + std::string(tag) + " block found", text.size());
    try {
        return Json::parse(match->body);
    } catch (const Json::parse_error& e) {
        throw ParseError(std::string("invalid JSON in ```") + std::string(tag) + " block: " + e.what(),
                         match->offset + (e.byte > 0 ? e.byte - 1 : 0));
    }
}

std::string render_tagged_block(std::string_view tag, const Json& payload) {
    std::string out = "```";
    out += tag;
    out += '\n';
    out += payload.dump(2);
    out += "\n```\n";
    return out;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace evoflow
