#include <atomic>
#include <cstdint>

namespace seqmix {

namespace {
std::atomic<std::uint64_t> g_clamp_count{0};
}

std::uint64_t linear_attention_clamp_count() { return g_clamp_count.load(); }
void reset_linear_attention_clamp_count() { g_clamp_count.store(0); }
void bump_linear_attention_clamp_count() { g_clamp_count.fetch_add(1); }

}  // namespace seqmix
