#include "tgre/ensemble.hpp"

namespace tgre {

std::atomic<uint64_t> EvalCounters::weak_evals{0};

Variant parse_variant(const std::string& name) {
    if (name == "sr") return Variant::SR;
    if (name == "re") return Variant::RE;
    if (name == "soft-gre") return Variant::SoftGRE;
    if (name == "tree-gre") return Variant::TreeGRE;
    throw Error("unknown variant '" + name + "' (expected sr, re, soft-gre or tree-gre)");
}

}  // namespace tgre
