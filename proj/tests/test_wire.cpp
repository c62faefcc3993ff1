#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "codealign/wire.hpp"

using namespace codealign;
using codespace::CodeMap;
using core::Rng;
using core::RngSeed;
using wire::CodeMessage;
using wire::MessageMeta;

namespace {

CodeMap make_map(int h, int w, std::uint32_t d, const std::vector<std::uint32_t>& idx,
                 const std::string& owner = "mB") {
    CodeMap m;
    m.height = h;
    m.width = w;
    m.indices = idx;
    m.codebook_ref = {owner, d};
    return m;
}

CodeMap random_map(int h, int w, std::uint32_t d, Rng& rng, const std::string& owner) {
    CodeMap m;
    m.height = h;
    m.width = w;
    m.codebook_ref = {owner, d};
    m.indices.resize(static_cast<std::size_t>(h) * w);
    for (auto& v : m.indices) v = static_cast<std::uint32_t>(rng.uniform_int(d));
    return m;
}

}  // namespace

TEST_CASE("bit width law") {
    CHECK(wire::bits_for_codebook(2) == 1);
    CHECK(wire::bits_for_codebook(3) == 2);
    CHECK(wire::bits_for_codebook(16) == 4);
    CHECK(wire::bits_for_codebook(17) == 5);
    CHECK(wire::bits_for_codebook(256) == 8);
    CHECK_THROWS_AS(wire::bits_for_codebook(1), core::ConfigError);
    CHECK_THROWS_AS(wire::bits_for_codebook(257), core::ConfigError);
}

TEST_CASE("golden vectors: nibble packing is MSB-first") {
    const auto m = make_map(1, 4, 16, {0, 1, 2, 3});
    const auto msg = wire::pack(m, MessageMeta{});
    REQUIRE(msg.payload.size() == 2);
    CHECK(msg.payload[0] == 0x01);
    CHECK(msg.payload[1] == 0x23);
}

TEST_CASE("golden vectors: one-bit packing") {
    const auto m = make_map(1, 8, 2, {1, 0, 1, 0, 1, 0, 1, 0});
    const auto msg = wire::pack(m, MessageMeta{});
    REQUIRE(msg.payload.size() == 1);
    CHECK(msg.payload[0] == 0xAA);
}

TEST_CASE("payload size law") {
    CHECK(wire::packed_payload_bytes(32, 32, 4) == 512);
    CHECK(wire::packed_payload_bytes(1, 3, 3) == 2);   // 9 bits -> 2 bytes
    CHECK(wire::packed_payload_bytes(1, 1, 1) == 1);
    CHECK(wire::packed_payload_bytes(64, 64, 8) == 4096);
}

TEST_CASE("compression ratio law and the paper-anchored figures") {
    // 32x32 map at D=16: payload 512 bytes vs dense 32x32x16 f32 = 65536 bytes
    Rng rng(RngSeed{3});
    const auto m = random_map(32, 32, 16, rng, "mB");
    const auto msg = wire::pack(m, MessageMeta{});
    CHECK(msg.payload.size() == 512);
    const double dense = 4.0 * 32 * 32 * 16;
    CHECK(dense / static_cast<double>(msg.payload.size()) == 128.0);
    CHECK(wire::compression_ratio_law(16, 16) == 128.0);
    CHECK(wire::compression_ratio_law(128, 16) == 1024.0);
}

TEST_CASE("round trip is exact over random maps and sizes") {
    Rng rng(RngSeed{4});
    for (int trial = 0; trial < 300; ++trial) {
        const int h = 1 + static_cast<int>(rng.uniform_int(64));
        const int w = 1 + static_cast<int>(rng.uniform_int(64));
        const std::uint32_t d = 2 + static_cast<std::uint32_t>(rng.uniform_int(255));
        const auto m = random_map(h, w, d, rng, "owner_x");
        MessageMeta meta;
        meta.sender_id = static_cast<std::uint32_t>(rng.uniform_int(1000));
        meta.scene_id = static_cast<std::uint32_t>(rng.uniform_int(1000));
        meta.pose = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3)};

        const auto msg = wire::pack(m, meta);
        CHECK(msg.payload.size() ==
              wire::packed_payload_bytes(h, w, wire::bits_for_codebook(d)));

        // through the byte layer too
        const auto bytes = msg.to_bytes();
        const auto msg2 = CodeMessage::from_bytes(bytes);
        CHECK(msg2.sender_id == meta.sender_id);
        CHECK(msg2.scene_id == meta.scene_id);
        CHECK(msg2.target_owner == "owner_x");
        CHECK(msg2.pose_x == msg.pose_x);
        CHECK(msg2.pose_heading == msg.pose_heading);

        const auto back = wire::unpack(msg2, d);
        CHECK(back == m);
    }
}

TEST_CASE("corruption never misparses silently") {
    Rng rng(RngSeed{5});
    const auto m = random_map(4, 4, 16, rng, "mB");
    const auto msg = wire::pack(m, MessageMeta{});

    SUBCASE("truncated payload") {
        auto bad = msg;
        bad.payload.pop_back();
        CHECK_THROWS_AS(wire::unpack(bad, 16), core::CorruptionError);
    }
    SUBCASE("extended payload") {
        auto bad = msg;
        bad.payload.push_back(0);
        CHECK_THROWS_AS(wire::unpack(bad, 16), core::CorruptionError);
    }
    SUBCASE("truncated byte stream") {
        auto bytes = msg.to_bytes();
        bytes.pop_back();
        CHECK_THROWS_AS(CodeMessage::from_bytes(bytes), core::CorruptionError);
    }
    SUBCASE("bit width inconsistent with codebook") {
        CHECK_THROWS_AS(wire::unpack(msg, 200), core::CorruptionError);
    }
    SUBCASE("decoded index out of range") {
        // 1x1 at D=3 (b=2): the index 3 pattern is encodable but invalid
        CodeMessage bad;
        bad.target_owner = "mB";
        bad.height = 1;
        bad.width = 1;
        bad.bits_per_index = 2;
        bad.payload = {0xC0};  // index 3
        CHECK_THROWS_AS(wire::unpack(bad, 3), core::CorruptionError);
    }
    SUBCASE("nonzero padding bits") {
        auto bad = msg;  // 16 indices * 4 bits = 64 bits, no padding; use 1x3 instead
        const auto m2 = make_map(1, 3, 16, {1, 2, 3});
        auto msg2 = wire::pack(m2, MessageMeta{});
        msg2.payload[1] |= 0x0F;  // scribble into the pad nibble
        CHECK_THROWS_AS(wire::unpack(msg2, 16), core::CorruptionError);
    }
}

TEST_CASE("empty grids are rejected at construction") {
    CodeMap m;
    m.height = 0;
    m.width = 0;
    m.codebook_ref = {"mB", 16};
    CHECK_THROWS_AS(m.validate(), core::ShapeError);
    CHECK_THROWS_AS(wire::pack(m, MessageMeta{}), core::ShapeError);
}

TEST_CASE("pack rejects out-of-range indices") {
    auto m = make_map(1, 2, 4, {0, 7});
    CHECK_THROWS_AS(wire::pack(m, MessageMeta{}), core::CorruptionError);
}

TEST_CASE("header layout is frozen") {
    const auto m = make_map(1, 4, 16, {0, 1, 2, 3}, "ab");
    MessageMeta meta;
    meta.sender_id = 7;
    meta.scene_id = 9;
    meta.pose = {1.0, 2.0, 0.5};
    const auto bytes = wire::pack(m, meta).to_bytes();
    REQUIRE(bytes.size() == 26 + 2 + 2);  // header + name + payload
    CHECK(bytes[0] == 7);                 // sender_id LE
    CHECK(bytes[4] == 9);                 // scene_id LE
    CHECK(bytes[8] == 2);                 // name length
    CHECK(bytes[9] == 'a');
    CHECK(bytes[10] == 'b');
    CHECK(bytes[11] == 1);  // H = 1 LE
    CHECK(bytes[12] == 0);
    CHECK(bytes[13] == 4);  // W = 4 LE
    CHECK(bytes[14] == 0);
    CHECK(bytes[15] == 4);  // b = 4
    CHECK(bytes[28] == 0x01);
    CHECK(bytes[29] == 0x23);
}

TEST_CASE("bandwidth report aggregates per mode") {
    std::vector<wire::LinkRecord> log;
    for (int i = 0; i < 3; ++i) {
        wire::LinkRecord rec;
        rec.mode = "codealign";
        rec.payload_bytes = 512;
        rec.header_bytes = 28;
        rec.height = 32;
        rec.width = 32;
        rec.channels = 16;
        log.push_back(rec);
    }
    wire::LinkRecord late;
    late.mode = "late_fusion";
    late.payload_bytes = 36;
    late.ratio_defined = false;
    log.push_back(late);

    const auto rep = wire::bandwidth_report(log);
    CHECK(rep.at("codealign").compression_ratio == 128.0);
    CHECK(rep.at("codealign").total_payload_bytes == 3 * 512);
    CHECK(rep.at("codealign").total_header_bytes == 3 * 28);
    CHECK(rep.at("late_fusion").ratio_defined == false);
    CHECK(rep.at("late_fusion").total_payload_bytes == 36);
}
