#include "histogen/textcond/encoder.hpp"

namespace histogen::textcond {

WindowedTokens window_split(const TokenSequence& seq, int max_windows, int pad_id) {
    if (max_windows < 1) throw ConfigError("window_split: max_windows must be >= 1");
    const auto capacity = static_cast<std::size_t>(max_windows) * kWindowLen;
    if (seq.length() > capacity) {
        throw OverBudgetError("token sequence of length " + std::to_string(seq.length()) +
                              " exceeds capacity " + std::to_string(capacity) + " by " +
                              std::to_string(seq.length() - capacity) + " tokens");
    }

    WindowedTokens out;
    const int n_windows =
        std::max<int>(1, static_cast<int>((seq.length() + kWindowLen - 1) / kWindowLen));
    for (int w = 0; w < n_windows; ++w) {
        std::vector<int> ids(static_cast<std::size_t>(kWindowLen), pad_id);
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(kWindowLen), 0);
        const std::size_t base = static_cast<std::size_t>(w) * kWindowLen;
        for (std::size_t i = 0; i < static_cast<std::size_t>(kWindowLen); ++i) {
            if (base + i < seq.length()) {
                ids[i] = seq.ids[base + i];
                mask[i] = 1;
            }
        }
        out.windows.push_back(std::move(ids));
        out.mask.push_back(std::move(mask));
    }
    return out;
}

}  // namespace histogen::textcond
