#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codealign/codespace.hpp"
#include "codealign/core.hpp"

namespace codealign::wire {

using codespace::CodeMap;

/// Packed code-map message. Frozen wire layout, all integers little-endian:
///
///   offset  size  field
///   0       4     sender_id (u32)
///   4       4     scene_id (u32)
///   8       1     target_owner name length L (u8)
///   9       L     target_owner name bytes
///   9+L     2     H (u16)
///   11+L    2     W (u16)
///   13+L    1     bits per index b = ceil(log2 D), b in [1, 8]
///   14+L    12    pose x, y, heading (3 x f32)
///   26+L    ...   payload: H*W indices, b bits each, row-major, MSB-first
///                 within each byte, final byte zero-padded
///
/// The codebook size D itself does not travel: the receiver owns the target
/// codebook. unpack() reconstructs D as 2^b unless the caller supplies it.
struct CodeMessage {
    std::uint32_t sender_id = 0;
    std::uint32_t scene_id = 0;
    std::string target_owner;
    std::uint16_t height = 0;
    std::uint16_t width = 0;
    std::uint8_t bits_per_index = 0;
    float pose_x = 0.0f;
    float pose_y = 0.0f;
    float pose_heading = 0.0f;
    std::vector<std::uint8_t> payload;

    std::size_t header_bytes() const { return 26 + target_owner.size(); }
    std::size_t payload_bytes() const { return payload.size(); }

    std::vector<std::uint8_t> to_bytes() const;
    static CodeMessage from_bytes(const std::vector<std::uint8_t>& bytes);
};

struct MessageMeta {
    std::uint32_t sender_id = 0;
    std::uint32_t scene_id = 0;
    core::Pose pose;
};

/// Bits needed for indices in [0, D); D in [2, 256].
int bits_for_codebook(std::uint32_t d);

/// Exact payload size law: ceil(H*W*b / 8).
std::size_t packed_payload_bytes(int height, int width, int bits_per_index);

CodeMessage pack(const CodeMap& map, const MessageMeta& meta);

/// Reconstructs the code map; D defaults to 2^b when not supplied.
CodeMap unpack(const CodeMessage& msg);
CodeMap unpack(const CodeMessage& msg, std::uint32_t expected_d);

/// One transmitted message as seen by the bandwidth accounting.
struct LinkRecord {
    std::string mode;
    int sender = 0;
    int receiver = 0;
    std::size_t payload_bytes = 0;
    std::size_t header_bytes = 0;
    // Dense-equivalent dims of what the payload replaces.
    int height = 0;
    int width = 0;
    int channels = 0;
    bool ratio_defined = true;  // late-fusion box lists carry no dense equivalent
};

struct LinkReport {
    std::string mode;
    std::size_t total_payload_bytes = 0;
    std::size_t total_header_bytes = 0;
    std::size_t message_count = 0;
    double mean_payload_bytes = 0.0;
    double compression_ratio = 0.0;  // dense f32 bytes / payload bytes; 0 when undefined
    bool ratio_defined = false;
};

/// Aggregates per-mode byte counts and the exact compression ratio
/// (H*W*C*4) / payload, header excluded and reported separately.
std::map<std::string, LinkReport> bandwidth_report(const std::vector<LinkRecord>& log);

/// The ratio law in closed form: 32*C / ceil(log2 D) for f32 dense features.
double compression_ratio_law(int channels, std::uint32_t d);

}  // namespace codealign::wire
