#include "diffsed/dataset_io.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace diffsed {

void save_dataset(const std::vector<LabeledClip>& clips, const std::string& dir,
                  const nlohmann::json& meta) {
    fs::create_directories(fs::path(dir) / "clips");

    std::ofstream ann(fs::path(dir) / "annotations.jsonl", std::ios::trunc);
    if (!ann) throw std::runtime_error("cannot write annotations.jsonl in " + dir);
    for (const auto& clip : clips) {
        nlohmann::json j;
        j["clip_id"] = clip.clip_id;
        j["duration"] = clip.waveform.duration();
        j["sample_rate"] = clip.waveform.sample_rate;
        nlohmann::json events = nlohmann::json::array();
        for (const auto& e : clip.annotations) {
            events.push_back({{"onset", e.onset}, {"offset", e.offset}, {"label", e.label}});
        }
        j["events"] = events;
        ann << j.dump() << "\n";

        std::ofstream wav(fs::path(dir) / "clips" / (clip.clip_id + ".f64le"),
                          std::ios::binary | std::ios::trunc);
        if (!wav) throw std::runtime_error("cannot write clip " + clip.clip_id);
        wav.write(reinterpret_cast<const char*>(clip.waveform.samples.data()),
                  static_cast<std::streamsize>(clip.waveform.samples.size() * sizeof(double)));
    }

    std::ofstream mf(fs::path(dir) / "meta.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write meta.json in " + dir);
    mf << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    {
        std::ifstream mf(fs::path(dir) / "meta.json");
        if (mf) {
            try {
                ds.meta = nlohmann::json::parse(mf);
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error("dataset parse error in meta.json: " +
                                         std::string(e.what()));
            }
        }
    }

    std::ifstream ann(fs::path(dir) / "annotations.jsonl");
    if (!ann) throw std::runtime_error("dataset missing annotations.jsonl: " + dir);
    std::string line;
    size_t line_no = 0;
    while (std::getline(ann, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("dataset parse error at annotations.jsonl:" +
                                     std::to_string(line_no) + ": " + e.what());
        }
        LabeledClip clip;
        try {
            clip.clip_id = j.at("clip_id").get<std::string>();
            clip.waveform.sample_rate = j.at("sample_rate").get<int>();
            const double duration = j.at("duration").get<double>();
            for (const auto& e : j.at("events")) {
                EventAnnotation a;
                a.onset = e.at("onset").get<double>();
                a.offset = e.at("offset").get<double>();
                a.label = e.at("label").get<int>();
                if (!(a.onset >= 0.0 && a.onset < a.offset && a.offset <= duration + 1e-9))
                    throw std::runtime_error("annotation out of clip bounds");
                clip.annotations.push_back(a);
            }
        } catch (const std::exception& e) {
            const std::string id = j.contains("clip_id") ? j["clip_id"].get<std::string>() : "?";
            throw std::runtime_error("dataset parse error for clip '" + id + "': " + e.what());
        }

        const fs::path wav_path = fs::path(dir) / "clips" / (clip.clip_id + ".f64le");
        std::ifstream wav(wav_path, std::ios::binary);
        if (!wav)
            throw std::runtime_error("dataset parse error for clip '" + clip.clip_id +
                                     "': missing " + wav_path.string());
        wav.seekg(0, std::ios::end);
        const auto bytes = static_cast<size_t>(wav.tellg());
        wav.seekg(0);
        clip.waveform.samples.resize(bytes / sizeof(double));
        wav.read(reinterpret_cast<char*>(clip.waveform.samples.data()),
                 static_cast<std::streamsize>(bytes));
        ds.clips.push_back(std::move(clip));
    }
    return ds;
}

}  // namespace diffsed
