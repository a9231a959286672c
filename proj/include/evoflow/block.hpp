#pragma once
/// Fenced structured blocks: the single wire grammar shared by model-facing
/// messages (judge verdicts, mutation proposals, generated workflows, plans).
///
///     ```<tag>
///     { ...JSON payload... }
///     ```
///
/// The payload is one JSON value. Text outside the fence is ignored.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace evoflow {

using Json = nlohmann::json;

struct FencedBlock {
    std::string tag;
    std::string body;
    std::size_t offset = 0; ///< byte offset of the body in the source text
};

/// All fenced blocks in `text`, in order. An unterminated fence yields no block.
std::vector<FencedBlock> find_fenced_blocks(std::string_view text);

/// Parses the single block tagged `tag`. Throws ParseError when there is no
/// such block, more than one, or the payload is not valid JSON.
Json parse_tagged_block(std::string_view text, std::string_view tag);

/// Renders `payload` as a fenced block with the given tag.
std::string render_tagged_block(std::string_view tag, const Json& payload);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// SplitMix64 step; used to derive independent streams from a hash.
std::uint64_t splitmix64(std::uint64_t x);

std::string hex64(std::uint64_t v);

} // namespace evoflow
