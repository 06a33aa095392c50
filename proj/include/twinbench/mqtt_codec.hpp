#pragma once

// Encoder/decoder for the MQTT 3.1.1 control packets the testbed speaks:
// CONNECT, CONNACK, PUBLISH (QoS 0/1), PUBACK, SUBSCRIBE, SUBACK, PINGREQ,
// PINGRESP and DISCONNECT. Everything here is a pure function over bytes.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace twinbench::mqtt {

using Bytes = std::vector<std::uint8_t>;
using PacketId = std::uint16_t;

inline constexpr std::uint32_t max_remaining_length = 268'435'455;
inline constexpr std::uint8_t suback_failure = 0x80;

enum class CodecErrc {
    out_of_range,
    malformed,
    protocol_violation,
    invalid_packet,
};

std::string_view to_string(CodecErrc code);

class CodecError : public std::runtime_error {
public:
    CodecError(CodecErrc code, const std::string& what);
    CodecErrc code() const noexcept { return code_; }

private:
    CodecErrc code_;
};

enum class ConnectReturn : std::uint8_t {
    accepted = 0,
    unacceptable_protocol = 1,
    identifier_rejected = 2,
    server_unavailable = 3,
    bad_credentials = 4,
    not_authorized = 5,
};

struct Connect {
    std::string client_id;
    std::uint16_t keep_alive = 60;
    bool operator==(const Connect&) const = default;
};

struct ConnAck {
    std::uint8_t return_code = 0;
    bool operator==(const ConnAck&) const = default;
};

struct Publish {
    std::string topic;
    Bytes payload;
    std::uint8_t qos = 0;
    std::optional<PacketId> packet_id; // present iff qos == 1
    bool dup = false;
    bool retain = false;
    bool operator==(const Publish&) const = default;
};

struct PubAck {
    PacketId packet_id = 0;
    bool operator==(const PubAck&) const = default;
};

struct SubscribeEntry {
    std::string filter;
    std::uint8_t qos = 0;
    bool operator==(const SubscribeEntry&) const = default;
};

struct Subscribe {
    PacketId packet_id = 0;
    std::vector<SubscribeEntry> entries;
    bool operator==(const Subscribe&) const = default;
};

struct SubAck {
    PacketId packet_id = 0;
    std::vector<std::uint8_t> granted;
    bool operator==(const SubAck&) const = default;
};

struct PingReq {
    bool operator==(const PingReq&) const = default;
};
struct PingResp {
    bool operator==(const PingResp&) const = default;
};
struct Disconnect {
    bool operator==(const Disconnect&) const = default;
};

using Packet = std::variant<Connect, ConnAck, Publish, PubAck, Subscribe, SubAck, PingReq,
                            PingResp, Disconnect>;

std::string_view packet_name(const Packet& p);

/// Minimal base-128 varint used for the fixed header's remaining length.
/// Throws CodecError(out_of_range) above max_remaining_length.
Bytes encode_remaining_length(std::uint32_t n);

struct RemainingLength {
    std::uint32_t value = 0;
    std::size_t consumed = 0;
};

/// Returns nullopt when the continuation bit runs past the end of `bytes`.
/// Throws CodecError(malformed) when a fifth length byte would be needed.
std::optional<RemainingLength> decode_remaining_length(std::span<const std::uint8_t> bytes);

/// Throws CodecError(invalid_packet) if `p` breaks a Packet invariant.
Bytes encode_packet(const Packet& p);

struct Decoded {
    Packet packet;
    std::size_t consumed = 0;
};

/// Decodes the first complete packet at the front of `bytes`. Returns nullopt
/// while the frame is incomplete; a valid prefix never throws. Throws
/// CodecError(malformed) or CodecError(protocol_violation) on bad input.
std::optional<Decoded> decode_packet(std::span<const std::uint8_t> bytes);

bool is_valid_utf8(std::string_view s);

/// Topic names: 1..65535 bytes of well-formed UTF-8, no NUL, no wildcards.
bool is_valid_topic(std::string_view topic);

/// Topic filters: '+' fills a whole level, '#' fills the last level only.
bool is_valid_filter(std::string_view filter);

/// MQTT 3.1.1 wildcard matching. Topics beginning with '$' are not matched
/// by a leading wildcard. Both arguments are expected to be valid.
bool topic_matches(std::string_view filter, std::string_view topic);

/// Incremental frame splitter over a growing byte buffer.
class StreamDecoder {
public:
    void feed(std::span<const std::uint8_t> bytes);
    /// Next complete packet, or nullopt when more bytes are needed.
    std::optional<Packet> next();
    std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

private:
    Bytes buffer_;
    std::size_t offset_ = 0;
};

} // namespace twinbench::mqtt
