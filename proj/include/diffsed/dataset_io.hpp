#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "diffsed/audio.hpp"

namespace diffsed {

// On-disk dataset layout:
//   <dir>/clips/<clip_id>.f64le   raw little-endian f64 samples
//   <dir>/annotations.jsonl       one object per clip:
//       {"clip_id":..., "duration":..., "sample_rate":..., "events":[{"onset","offset","label"}]}
//   <dir>/meta.json               generator spec + seed (or arbitrary provenance)
struct Dataset {
    std::vector<LabeledClip> clips;
    nlohmann::json meta;
};

void save_dataset(const std::vector<LabeledClip>& clips, const std::string& dir,
                  const nlohmann::json& meta);

// Validates every annotation (bounds inside the clip, onset < offset); a
// malformed line or out-of-bounds annotation raises a parse error naming the
// clip_id.
Dataset load_dataset(const std::string& dir);

}  // namespace diffsed
