#pragma once

// Random packets of the supported subset, shared by the codec tests.

#include "twinbench/mqtt_codec.hpp"

#include <random>

namespace twinbench::mqtt::testing {

inline std::string random_level(std::mt19937_64& rng)
{
    static const std::string alphabet = "abcxyz019_-";
    std::string s;
    const auto len = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < len; ++i) {
        s += alphabet[std::uniform_int_distribution<std::size_t>(0, alphabet.size() - 1)(rng)];
    }
    return s;
}

inline std::string random_topic(std::mt19937_64& rng)
{
    std::string t = random_level(rng);
    const auto levels = std::uniform_int_distribution<int>(0, 4)(rng);
    for (int i = 0; i < levels; ++i) {
        t += '/' + random_level(rng);
    }
    return t;
}

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t max_len)
{
    Bytes b(std::uniform_int_distribution<std::size_t>(0, max_len)(rng));
    for (auto& x : b) {
        x = static_cast<std::uint8_t>(rng());
    }
    return b;
}

inline Packet random_packet(std::mt19937_64& rng)
{
    const auto id = [&] { return static_cast<PacketId>(std::uniform_int_distribution<int>(1, 65535)(rng)); };
    switch (std::uniform_int_distribution<int>(0, 8)(rng)) {
    case 0:
        return Connect{random_level(rng), static_cast<std::uint16_t>(rng())};
    case 1:
        return ConnAck{static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, 5)(rng))};
    case 2: {
        Publish p;
        p.topic = random_topic(rng);
        p.payload = random_bytes(rng, rng() % 8 == 0 ? 400 : 40);
        p.qos = static_cast<std::uint8_t>(rng() % 2);
        if (p.qos == 1) {
            p.packet_id = id();
            p.dup = rng() % 2 == 0;
        }
        p.retain = rng() % 2 == 0;
        return p;
    }
    case 3:
        return PubAck{id()};
    case 4: {
        Subscribe s{id(), {}};
        const auto n = std::uniform_int_distribution<int>(1, 3)(rng);
        for (int i = 0; i < n; ++i) {
            s.entries.push_back({random_topic(rng), static_cast<std::uint8_t>(rng() % 2)});
        }
        return s;
    }
    case 5: {
        SubAck s{id(), {}};
        static const std::uint8_t codes[] = {0, 1, suback_failure};
        const auto n = std::uniform_int_distribution<int>(1, 4)(rng);
        for (int i = 0; i < n; ++i) {
            s.granted.push_back(codes[rng() % 3]);
        }
        return s;
    }
    case 6:
        return PingReq{};
    case 7:
        return PingResp{};
    default:
        return Disconnect{};
    }
}

} // namespace twinbench::mqtt::testing
