#include "twinbench/mqtt_codec.hpp"

#include <algorithm>

namespace twinbench::mqtt {

namespace {

enum PacketType : std::uint8_t {
    connect_type = 1,
    connack_type = 2,
    publish_type = 3,
    puback_type = 4,
    subscribe_type = 8,
    suback_type = 9,
    pingreq_type = 12,
    pingresp_type = 13,
    disconnect_type = 14,
};

constexpr std::string_view protocol_name = "MQTT";
constexpr std::uint8_t protocol_level = 4;
constexpr std::uint8_t clean_session_flag = 0x02;

[[noreturn]] void fail(CodecErrc code, const std::string& what)
{
    throw CodecError(code, what);
}

class Writer {
public:
    void byte(std::uint8_t b) { out_.push_back(b); }

    void u16(std::uint16_t v)
    {
        out_.push_back(static_cast<std::uint8_t>(v >> 8));
        out_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    }

    void string(std::string_view s)
    {
        if (s.size() > 0xFFFF) {
            fail(CodecErrc::invalid_packet, "string longer than 65535 bytes");
        }
        u16(static_cast<std::uint16_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

    Bytes frame(std::uint8_t first_byte) &&
    {
        if (out_.size() > max_remaining_length) {
            fail(CodecErrc::invalid_packet, "packet exceeds maximum remaining length");
        }
        Bytes packet;
        const Bytes length = encode_remaining_length(static_cast<std::uint32_t>(out_.size()));
        packet.reserve(1 + length.size() + out_.size());
        packet.push_back(first_byte);
        packet.insert(packet.end(), length.begin(), length.end());
        packet.insert(packet.end(), out_.begin(), out_.end());
        return packet;
    }

private:
    Bytes out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> body) : body_(body) {}

    std::uint8_t byte()
    {
        need(1);
        return body_[pos_++];
    }

    std::uint16_t u16()
    {
        need(2);
        const auto v = static_cast<std::uint16_t>((body_[pos_] << 8) | body_[pos_ + 1]);
        pos_ += 2;
        return v;
    }

    std::span<const std::uint8_t> binary()
    {
        const std::uint16_t len = u16();
        need(len);
        auto out = body_.subspan(pos_, len);
        pos_ += len;
        return out;
    }

    std::string utf8_string(const char* what)
    {
        const auto b = binary();
        std::string s(b.begin(), b.end());
        if (!is_valid_utf8(s)) {
            fail(CodecErrc::malformed, std::string("invalid UTF-8 in ") + what);
        }
        return s;
    }

    std::span<const std::uint8_t> rest()
    {
        auto out = body_.subspan(pos_);
        pos_ = body_.size();
        return out;
    }

    bool done() const noexcept { return pos_ == body_.size(); }

    void expect_done(const char* what) const
    {
        if (!done()) {
            fail(CodecErrc::malformed, std::string("trailing bytes in ") + what);
        }
    }

private:
    void need(std::size_t n) const
    {
        if (body_.size() - pos_ < n) {
            fail(CodecErrc::malformed, "packet body shorter than its fields");
        }
    }

    std::span<const std::uint8_t> body_;
    std::size_t pos_ = 0;
};

bool valid_suback_code(std::uint8_t c)
{
    return c <= 2 || c == suback_failure;
}

Bytes encode(const Connect& p)
{
    if (!is_valid_utf8(p.client_id)) {
        fail(CodecErrc::invalid_packet, "client id is not valid UTF-8");
    }
    Writer w;
    w.string(protocol_name);
    w.byte(protocol_level);
    w.byte(clean_session_flag);
    w.u16(p.keep_alive);
    w.string(p.client_id);
    return std::move(w).frame(connect_type << 4);
}

Bytes encode(const ConnAck& p)
{
    if (p.return_code > 5) {
        fail(CodecErrc::invalid_packet, "CONNACK return code above 5");
    }
    Writer w;
    w.byte(0);
    w.byte(p.return_code);
    return std::move(w).frame(connack_type << 4);
}

Bytes encode(const Publish& p)
{
    if (p.qos > 1) {
        fail(CodecErrc::invalid_packet, "only QoS 0 and 1 are supported");
    }
    if (p.qos == 0 && p.packet_id) {
        fail(CodecErrc::invalid_packet, "QoS 0 PUBLISH carries a packet id");
    }
    if (p.qos == 1 && (!p.packet_id || *p.packet_id == 0)) {
        fail(CodecErrc::invalid_packet, "QoS 1 PUBLISH needs a nonzero packet id");
    }
    if (p.qos == 0 && p.dup) {
        fail(CodecErrc::invalid_packet, "DUP set on a QoS 0 PUBLISH");
    }
    if (!is_valid_topic(p.topic)) {
        fail(CodecErrc::invalid_packet, "invalid topic name");
    }
    Writer w;
    w.string(p.topic);
    if (p.packet_id) {
        w.u16(*p.packet_id);
    }
    w.raw(p.payload);
    const auto first = static_cast<std::uint8_t>((publish_type << 4) | (p.dup ? 0x08 : 0) |
                                                 (p.qos << 1) | (p.retain ? 0x01 : 0));
    return std::move(w).frame(first);
}

Bytes encode(const PubAck& p)
{
    if (p.packet_id == 0) {
        fail(CodecErrc::invalid_packet, "PUBACK packet id is zero");
    }
    Writer w;
    w.u16(p.packet_id);
    return std::move(w).frame(puback_type << 4);
}

Bytes encode(const Subscribe& p)
{
    if (p.packet_id == 0) {
        fail(CodecErrc::invalid_packet, "SUBSCRIBE packet id is zero");
    }
    if (p.entries.empty()) {
        fail(CodecErrc::invalid_packet, "SUBSCRIBE without entries");
    }
    Writer w;
    w.u16(p.packet_id);
    for (const auto& e : p.entries) {
        if (e.filter.empty() || !is_valid_utf8(e.filter)) {
            fail(CodecErrc::invalid_packet, "SUBSCRIBE filter is empty or not UTF-8");
        }
        if (e.qos > 2) {
            fail(CodecErrc::invalid_packet, "requested QoS above 2");
        }
        w.string(e.filter);
        w.byte(e.qos);
    }
    return std::move(w).frame(static_cast<std::uint8_t>((subscribe_type << 4) | 0x02));
}

Bytes encode(const SubAck& p)
{
    if (p.packet_id == 0) {
        fail(CodecErrc::invalid_packet, "SUBACK packet id is zero");
    }
    if (p.granted.empty()) {
        fail(CodecErrc::invalid_packet, "SUBACK without return codes");
    }
    Writer w;
    w.u16(p.packet_id);
    for (auto code : p.granted) {
        if (!valid_suback_code(code)) {
            fail(CodecErrc::invalid_packet, "invalid SUBACK return code");
        }
        w.byte(code);
    }
    return std::move(w).frame(suback_type << 4);
}

Bytes encode(const PingReq&) { return {pingreq_type << 4, 0x00}; }
Bytes encode(const PingResp&) { return {pingresp_type << 4, 0x00}; }
Bytes encode(const Disconnect&) { return {disconnect_type << 4, 0x00}; }

Connect decode_connect(Reader& r)
{
    const auto name = r.binary();
    if (std::string_view(reinterpret_cast<const char*>(name.data()), name.size()) != protocol_name) {
        fail(CodecErrc::malformed, "unknown protocol name");
    }
    if (r.byte() != protocol_level) {
        fail(CodecErrc::malformed, "unsupported protocol level");
    }
    const std::uint8_t flags = r.byte();
    if (flags & 0x01) {
        fail(CodecErrc::malformed, "reserved CONNECT flag set");
    }
    const bool will = flags & 0x04;
    const std::uint8_t will_qos = (flags >> 3) & 0x03;
    const bool will_retain = flags & 0x20;
    const bool password = flags & 0x40;
    const bool username = flags & 0x80;
    if (will_qos > 2 || (!will && (will_qos != 0 || will_retain)) || (password && !username)) {
        fail(CodecErrc::malformed, "inconsistent CONNECT flags");
    }

    Connect c;
    c.keep_alive = r.u16();
    c.client_id = r.utf8_string("client id");
    // Wills and credentials are outside the subset; they are parsed and dropped
    // so that stock clients can still connect.
    if (will) {
        r.utf8_string("will topic");
        r.binary();
    }
    if (username) {
        r.utf8_string("user name");
    }
    if (password) {
        r.binary();
    }
    r.expect_done("CONNECT");
    return c;
}

Publish decode_publish(std::uint8_t flags, Reader& r)
{
    Publish p;
    p.dup = flags & 0x08;
    p.qos = (flags >> 1) & 0x03;
    p.retain = flags & 0x01;
    if (p.qos > 1) {
        fail(CodecErrc::malformed, "PUBLISH QoS 2/3 is not supported");
    }
    if (p.qos == 0 && p.dup) {
        fail(CodecErrc::malformed, "DUP set on a QoS 0 PUBLISH");
    }
    p.topic = r.utf8_string("topic");
    if (p.topic.empty()) {
        fail(CodecErrc::malformed, "empty topic name");
    }
    if (p.topic.find_first_of("+#") != std::string::npos) {
        fail(CodecErrc::protocol_violation, "wildcard in PUBLISH topic");
    }
    if (p.qos == 1) {
        p.packet_id = r.u16();
        if (*p.packet_id == 0) {
            fail(CodecErrc::malformed, "QoS 1 PUBLISH with packet id zero");
        }
    }
    const auto payload = r.rest();
    p.payload.assign(payload.begin(), payload.end());
    return p;
}

PacketId nonzero_id(Reader& r, const char* what)
{
    const PacketId id = r.u16();
    if (id == 0) {
        fail(CodecErrc::malformed, std::string(what) + " with packet id zero");
    }
    return id;
}

Packet decode_body(std::uint8_t type, std::uint8_t flags, std::span<const std::uint8_t> body)
{
    Reader r(body);
    if (type != publish_type && flags != (type == subscribe_type ? 0x02 : 0x00)) {
        fail(CodecErrc::malformed, "invalid fixed header flags");
    }
    switch (type) {
    case connect_type:
        return decode_connect(r);
    case connack_type: {
        const std::uint8_t ack_flags = r.byte();
        ConnAck a{r.byte()};
        if ((ack_flags & 0xFE) != 0 || a.return_code > 5) {
            fail(CodecErrc::malformed, "invalid CONNACK");
        }
        r.expect_done("CONNACK");
        return a;
    }
    case publish_type:
        return decode_publish(flags, r);
    case puback_type: {
        PubAck a{nonzero_id(r, "PUBACK")};
        r.expect_done("PUBACK");
        return a;
    }
    case subscribe_type: {
        Subscribe s;
        s.packet_id = nonzero_id(r, "SUBSCRIBE");
        while (!r.done()) {
            SubscribeEntry e;
            e.filter = r.utf8_string("topic filter");
            const std::uint8_t options = r.byte();
            if (e.filter.empty() || (options & 0xFC) != 0 || options > 2) {
                fail(CodecErrc::malformed, "invalid SUBSCRIBE entry");
            }
            e.qos = options;
            s.entries.push_back(std::move(e));
        }
        if (s.entries.empty()) {
            fail(CodecErrc::malformed, "SUBSCRIBE without entries");
        }
        return s;
    }
    case suback_type: {
        SubAck a;
        a.packet_id = nonzero_id(r, "SUBACK");
        const auto codes = r.rest();
        if (codes.empty() || !std::all_of(codes.begin(), codes.end(), valid_suback_code)) {
            fail(CodecErrc::malformed, "invalid SUBACK return codes");
        }
        a.granted.assign(codes.begin(), codes.end());
        return a;
    }
    case pingreq_type:
        r.expect_done("PINGREQ");
        return PingReq{};
    case pingresp_type:
        r.expect_done("PINGRESP");
        return PingResp{};
    case disconnect_type:
        r.expect_done("DISCONNECT");
        return Disconnect{};
    default:
        fail(CodecErrc::malformed, "unsupported packet type " + std::to_string(type));
    }
}

bool is_known_type(std::uint8_t type)
{
    switch (type) {
    case connect_type:
    case connack_type:
    case publish_type:
    case puback_type:
    case subscribe_type:
    case suback_type:
    case pingreq_type:
    case pingresp_type:
    case disconnect_type:
        return true;
    default:
        return false;
    }
}

} // namespace

std::string_view to_string(CodecErrc code)
{
    switch (code) {
    case CodecErrc::out_of_range:
        return "OutOfRange";
    case CodecErrc::malformed:
        return "Malformed";
    case CodecErrc::protocol_violation:
        return "ProtocolViolation";
    case CodecErrc::invalid_packet:
        return "InvalidPacket";
    }
    return "Unknown";
}

CodecError::CodecError(CodecErrc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
{
}

std::string_view packet_name(const Packet& p)
{
    static constexpr std::string_view names[] = {"CONNECT", "CONNACK",  "PUBLISH",
                                                  "PUBACK",  "SUBSCRIBE", "SUBACK",
                                                  "PINGREQ", "PINGRESP", "DISCONNECT"};
    return names[p.index()];
}

Bytes encode_remaining_length(std::uint32_t n)
{
    if (n > max_remaining_length) {
        fail(CodecErrc::out_of_range, "remaining length " + std::to_string(n));
    }
    Bytes out;
    do {
        std::uint8_t digit = n % 128;
        n /= 128;
        if (n > 0) {
            digit |= 0x80;
        }
        out.push_back(digit);
    } while (n > 0);
    return out;
}

std::optional<RemainingLength> decode_remaining_length(std::span<const std::uint8_t> bytes)
{
    std::uint32_t value = 0;
    std::uint32_t multiplier = 1;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (i == 4) {
            fail(CodecErrc::malformed, "remaining length longer than 4 bytes");
        }
        value += (bytes[i] & 0x7F) * multiplier;
        if ((bytes[i] & 0x80) == 0) {
            return RemainingLength{value, i + 1};
        }
        multiplier *= 128;
    }
    return std::nullopt;
}

Bytes encode_packet(const Packet& p)
{
    return std::visit([](const auto& v) { return encode(v); }, p);
}

std::optional<Decoded> decode_packet(std::span<const std::uint8_t> bytes)
{
    if (bytes.empty()) {
        return std::nullopt;
    }
    const std::uint8_t type = bytes[0] >> 4;
    const std::uint8_t flags = bytes[0] & 0x0F;
    if (!is_known_type(type)) {
        fail(CodecErrc::malformed, "reserved or unsupported packet type " + std::to_string(type));
    }
    const auto length = decode_remaining_length(bytes.subspan(1));
    if (!length) {
        return std::nullopt;
    }
    const std::size_t header = 1 + length->consumed;
    if (bytes.size() - header < length->value) {
        return std::nullopt;
    }
    return Decoded{decode_body(type, flags, bytes.subspan(header, length->value)),
                   header + length->value};
}

bool is_valid_utf8(std::string_view s)
{
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        if (c == 0) {
            return false;
        }
        std::size_t extra = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= s.size()) {
            return false;
        }
        for (std::size_t k = 1; k <= extra; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) {
                return false;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        static constexpr std::uint32_t min_for_length[] = {0, 0x80, 0x800, 0x10000};
        if (cp < min_for_length[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += extra + 1;
    }
    return true;
}

bool is_valid_topic(std::string_view topic)
{
    return !topic.empty() && topic.size() <= 0xFFFF &&
           topic.find_first_of("+#") == std::string_view::npos && is_valid_utf8(topic);
}

bool is_valid_filter(std::string_view filter)
{
    if (filter.empty() || filter.size() > 0xFFFF || !is_valid_utf8(filter)) {
        return false;
    }
    std::size_t start = 0;
    while (true) {
        const std::size_t slash = filter.find('/', start);
        const bool last = slash == std::string_view::npos;
        const auto level = filter.substr(start, last ? std::string_view::npos : slash - start);
        if (level.find_first_of("+#") != std::string_view::npos) {
            if (level.size() != 1) {
                return false;
            }
            if (level == "#" && !last) {
                return false;
            }
        }
        if (last) {
            return true;
        }
        start = slash + 1;
    }
}

bool topic_matches(std::string_view filter, std::string_view topic)
{
    if (!topic.empty() && topic.front() == '$' && !filter.empty() &&
        (filter.front() == '+' || filter.front() == '#')) {
        return false;
    }
    std::size_t fpos = 0;
    std::size_t tpos = 0;
    while (true) {
        const std::size_t fslash = filter.find('/', fpos);
        const auto flevel = filter.substr(fpos, fslash == std::string_view::npos ? std::string_view::npos
                                                                                   : fslash - fpos);
        if (flevel == "#") {
            return true;
        }
        const std::size_t tslash = topic.find('/', tpos);
        const auto tlevel = topic.substr(tpos, tslash == std::string_view::npos ? std::string_view::npos
                                                                                : tslash - tpos);
        if (flevel != "+" && flevel != tlevel) {
            return false;
        }
        const bool filter_more = fslash != std::string_view::npos;
        const bool topic_more = tslash != std::string_view::npos;
        if (!filter_more) {
            return !topic_more;
        }
        if (!topic_more) {
            // "a/#" also matches the parent "a".
            return filter.substr(fslash + 1) == "#";
        }
        fpos = fslash + 1;
        tpos = tslash + 1;
    }
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes)
{
    if (offset_ > 0 && offset_ == buffer_.size()) {
        buffer_.clear();
        offset_ = 0;
    } else if (offset_ > 4096 && offset_ * 2 > buffer_.size()) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
        offset_ = 0;
    }
    buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<Packet> StreamDecoder::next()
{
    auto decoded = decode_packet(std::span(buffer_).subspan(offset_));
    if (!decoded) {
        return std::nullopt;
    }
    offset_ += decoded->consumed;
    return std::move(decoded->packet);
}

} // namespace twinbench::mqtt
