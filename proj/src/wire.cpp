#include "codealign/wire.hpp"

#include <cstring>

namespace codealign::wire {

using core::ConfigError;
using core::CorruptionError;

int bits_for_codebook(std::uint32_t d) {
    if (d < 2 || d > 256) throw ConfigError("codebook size must be in [2, 256] for packing");
    int b = 1;
    while ((1u << b) < d) ++b;
    return b;
}

std::size_t packed_payload_bytes(int height, int width, int bits_per_index) {
    const std::size_t bits =
        static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
        static_cast<std::size_t>(bits_per_index);
    return (bits + 7) / 8;
}

CodeMessage pack(const CodeMap& map, const MessageMeta& meta) {
    map.validate();
    const std::uint32_t d = map.codebook_ref.d;
    const int b = bits_for_codebook(d);
    if (map.height > 65535 || map.width > 65535) {
        throw ConfigError("pack: grid dims exceed u16");
    }

    CodeMessage msg;
    msg.sender_id = meta.sender_id;
    msg.scene_id = meta.scene_id;
    msg.target_owner = map.codebook_ref.owner;
    if (msg.target_owner.size() > 255) throw ConfigError("pack: owner name exceeds 255 bytes");
    msg.height = static_cast<std::uint16_t>(map.height);
    msg.width = static_cast<std::uint16_t>(map.width);
    msg.bits_per_index = static_cast<std::uint8_t>(b);
    msg.pose_x = static_cast<float>(meta.pose.x);
    msg.pose_y = static_cast<float>(meta.pose.y);
    msg.pose_heading = static_cast<float>(meta.pose.heading);

    msg.payload.assign(packed_payload_bytes(map.height, map.width, b), 0);
    std::size_t bitpos = 0;
    for (const std::uint32_t idx : map.indices) {
        if (idx >= (1u << b)) throw CorruptionError("pack: index does not fit bit width");
        for (int j = b - 1; j >= 0; --j, ++bitpos) {
            if ((idx >> j) & 1u) {
                msg.payload[bitpos >> 3] |= static_cast<std::uint8_t>(1u << (7 - (bitpos & 7)));
            }
        }
    }
    return msg;
}

CodeMap unpack(const CodeMessage& msg) {
    if (msg.bits_per_index < 1 || msg.bits_per_index > 8) {
        throw CorruptionError("unpack: bits per index out of range");
    }
    return unpack(msg, 1u << msg.bits_per_index);
}

CodeMap unpack(const CodeMessage& msg, std::uint32_t expected_d) {
    if (msg.height < 1 || msg.width < 1) throw CorruptionError("unpack: empty grid");
    const int b = msg.bits_per_index;
    if (b < 1 || b > 8) throw CorruptionError("unpack: bits per index out of range");
    if (expected_d < 2 || bits_for_codebook(expected_d) != b) {
        throw CorruptionError("unpack: bit width inconsistent with codebook size");
    }
    const std::size_t want = packed_payload_bytes(msg.height, msg.width, b);
    if (msg.payload.size() != want) {
        throw CorruptionError("unpack: payload length mismatch");
    }

    CodeMap map;
    map.height = msg.height;
    map.width = msg.width;
    map.codebook_ref = {msg.target_owner, expected_d};
    map.indices.resize(static_cast<std::size_t>(msg.height) * msg.width);
    std::size_t bitpos = 0;
    for (auto& idx : map.indices) {
        std::uint32_t v = 0;
        for (int j = 0; j < b; ++j, ++bitpos) {
            v = (v << 1) |
                ((msg.payload[bitpos >> 3] >> (7 - (bitpos & 7))) & 1u);
        }
        if (v >= expected_d) throw CorruptionError("unpack: decoded index out of range");
        idx = v;
    }
    // Padding bits must be zero; anything else is tampering.
    for (; bitpos < msg.payload.size() * 8; ++bitpos) {
        if ((msg.payload[bitpos >> 3] >> (7 - (bitpos & 7))) & 1u) {
            throw CorruptionError("unpack: nonzero padding bits");
        }
    }
    return map;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

std::uint16_t get_u16(const std::vector<std::uint8_t>& in, std::size_t off) {
    return static_cast<std::uint16_t>(in[off] | (in[off + 1] << 8));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t off) {
    return static_cast<std::uint32_t>(in[off]) | (static_cast<std::uint32_t>(in[off + 1]) << 8) |
           (static_cast<std::uint32_t>(in[off + 2]) << 16) |
           (static_cast<std::uint32_t>(in[off + 3]) << 24);
}

float get_f32(const std::vector<std::uint8_t>& in, std::size_t off) {
    const std::uint32_t bits = get_u32(in, off);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

std::vector<std::uint8_t> CodeMessage::to_bytes() const {
    std::vector<std::uint8_t> out;
    out.reserve(header_bytes() + payload.size());
    put_u32(out, sender_id);
    put_u32(out, scene_id);
    out.push_back(static_cast<std::uint8_t>(target_owner.size()));
    out.insert(out.end(), target_owner.begin(), target_owner.end());
    put_u16(out, height);
    put_u16(out, width);
    out.push_back(bits_per_index);
    put_f32(out, pose_x);
    put_f32(out, pose_y);
    put_f32(out, pose_heading);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

CodeMessage CodeMessage::from_bytes(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 9) throw CorruptionError("message truncated before name length");
    CodeMessage msg;
    msg.sender_id = get_u32(bytes, 0);
    msg.scene_id = get_u32(bytes, 4);
    const std::size_t name_len = bytes[8];
    const std::size_t header = 26 + name_len;
    if (bytes.size() < header) throw CorruptionError("message truncated inside header");
    msg.target_owner.assign(bytes.begin() + 9, bytes.begin() + 9 + name_len);
    std::size_t off = 9 + name_len;
    msg.height = get_u16(bytes, off);
    msg.width = get_u16(bytes, off + 2);
    msg.bits_per_index = bytes[off + 4];
    msg.pose_x = get_f32(bytes, off + 5);
    msg.pose_y = get_f32(bytes, off + 9);
    msg.pose_heading = get_f32(bytes, off + 13);
    if (msg.bits_per_index < 1 || msg.bits_per_index > 8) {
        throw CorruptionError("message has bad bit width");
    }
    const std::size_t want = packed_payload_bytes(msg.height, msg.width, msg.bits_per_index);
    if (bytes.size() != header + want) {
        throw CorruptionError("message payload length mismatch");
    }
    msg.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return msg;
}

double compression_ratio_law(int channels, std::uint32_t d) {
    return 32.0 * static_cast<double>(channels) / static_cast<double>(bits_for_codebook(d));
}

std::map<std::string, LinkReport> bandwidth_report(const std::vector<LinkRecord>& log) {
    std::map<std::string, LinkReport> out;
    std::map<std::string, double> dense_bytes;
    for (const auto& rec : log) {
        auto& rep = out[rec.mode];
        rep.mode = rec.mode;
        rep.total_payload_bytes += rec.payload_bytes;
        rep.total_header_bytes += rec.header_bytes;
        rep.message_count += 1;
        if (rec.ratio_defined) {
            rep.ratio_defined = true;
            dense_bytes[rec.mode] += 4.0 * rec.height * rec.width * rec.channels;
        }
    }
    for (auto& [mode, rep] : out) {
        if (rep.message_count > 0) {
            rep.mean_payload_bytes =
                static_cast<double>(rep.total_payload_bytes) / rep.message_count;
        }
        if (rep.ratio_defined && rep.total_payload_bytes > 0) {
            rep.compression_ratio =
                dense_bytes[mode] / static_cast<double>(rep.total_payload_bytes);
        }
    }
    return out;
}

}  // namespace codealign::wire
