#pragma once

#include <cstdint>
#include <cstring>

namespace histogen {

// IEEE 754 binary16 conversion with round-to-nearest-even. Used to emulate
// fp16 storage on hardware without native half arithmetic: values are rounded
// through half precision at explicit cast points while accumulation and
// master weights stay in fp32.
inline std::uint16_t float_to_half_bits(float f) {
    std::uint32_t x;
    std::memcpy(&x, &f, 4);
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    std::uint32_t mant = x & 0x007fffffu;
    const std::int32_t exp = static_cast<std::int32_t>((x >> 23) & 0xff) - 127;

    if (exp == 128) {  // inf / nan
        return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x0200u | (mant >> 13) : 0));
    }
    if (exp > 15) {  // overflow -> inf
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    }
    if (exp >= -14) {  // normal range
        std::uint32_t m = mant;
        std::uint16_t h = static_cast<std::uint16_t>(sign | ((exp + 15) << 10) | (m >> 13));
        const std::uint32_t rem = m & 0x1fffu;
        if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // may carry into exponent; that is correct
        return h;
    }
    if (exp >= -25) {  // subnormal half
        mant |= 0x00800000u;
        const int drop = -exp - 1;  // 14..24 dropped mantissa bits
        std::uint32_t m = mant >> drop;
        const std::uint32_t rem = mant & ((1u << drop) - 1u);
        const std::uint32_t halfway = 1u << (drop - 1);
        if (rem > halfway || (rem == halfway && (m & 1u))) ++m;
        return static_cast<std::uint16_t>(sign | m);
    }
    return static_cast<std::uint16_t>(sign);  // underflow -> signed zero
}

inline float half_bits_to_float(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    const std::uint32_t exp = (h >> 10) & 0x1f;
    const std::uint32_t mant = h & 0x3ffu;
    std::uint32_t x;
    if (exp == 0) {
        if (mant == 0) {
            x = sign;
        } else {  // subnormal: renormalize
            int e = -1;
            std::uint32_t m = mant;
            while (!(m & 0x400u)) { m <<= 1; ++e; }
            m &= 0x3ffu;
            x = sign | static_cast<std::uint32_t>((127 - 15 - e) << 23) | (m << 13);
        }
    } else if (exp == 31) {
        x = sign | 0x7f800000u | (mant << 13);
    } else {
        x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &x, 4);
    return f;
}

// Round a float through binary16 precision.
inline float round_to_half(float f) { return half_bits_to_float(float_to_half_bits(f)); }

}  // namespace histogen
