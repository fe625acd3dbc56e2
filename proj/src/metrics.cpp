#include "avnft/metrics.hpp"

#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace avnft {

namespace {

using nlohmann::json;

json to_json_obj(const IterationMetrics& m) {
    json j{{"iteration", m.iteration},
           {"wall_seconds", m.wall_seconds},
           {"mean_r_video", m.mean_r_video},
           {"std_r_video", m.std_r_video},
           {"mean_r_audio", m.mean_r_audio},
           {"std_r_audio", m.std_r_audio},
           {"mean_r_sync", m.mean_r_sync},
           {"std_r_sync", m.std_r_sync},
           {"video_loss", m.video_loss},
           {"audio_loss", m.audio_loss},
           {"conflict_rate", m.conflict_rate}};
    if (m.has_grad_norms) {
        json rows = json::array();
        for (const GradNormRow& r : m.grad_norms.rows)
            rows.push_back({{"stream", r.stream},
                            {"block", r.block},
                            {"path", r.path},
                            {"norm", r.norm}});
        j["grad_norms"] = {{"total", m.grad_norms.total}, {"rows", rows}};
    }
    return j;
}

std::string csv_cell(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string metrics_to_json(const IterationMetrics& m) { return to_json_obj(m).dump(); }

IterationMetrics metrics_from_json(const std::string& line) {
    try {
        json j = json::parse(line);
        IterationMetrics m;
        m.iteration = j.at("iteration").get<int>();
        m.wall_seconds = j.at("wall_seconds").get<double>();
        m.mean_r_video = j.at("mean_r_video").get<double>();
        m.std_r_video = j.at("std_r_video").get<double>();
        m.mean_r_audio = j.at("mean_r_audio").get<double>();
        m.std_r_audio = j.at("std_r_audio").get<double>();
        m.mean_r_sync = j.at("mean_r_sync").get<double>();
        m.std_r_sync = j.at("std_r_sync").get<double>();
        m.video_loss = j.at("video_loss").get<double>();
        m.audio_loss = j.at("audio_loss").get<double>();
        m.conflict_rate = j.at("conflict_rate").get<double>();
        if (j.contains("grad_norms")) {
            m.has_grad_norms = true;
            const json& g = j.at("grad_norms");
            m.grad_norms.total = g.at("total").get<double>();
            for (const json& r : g.at("rows"))
                m.grad_norms.rows.push_back({r.at("stream").get<std::string>(),
                                             r.at("block").get<int>(),
                                             r.at("path").get<std::string>(),
                                             r.at("norm").get<double>()});
        }
        return m;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("metrics: bad record: ") + e.what());
    }
}

MetricsWriter::MetricsWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("metrics: cannot open '" + path + "' for writing");
}

void MetricsWriter::append(const IterationMetrics& m) {
    out_ << metrics_to_json(m) << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("metrics: write failed");
}

std::vector<IterationMetrics> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("metrics: cannot open '" + path + "'");
    std::vector<IterationMetrics> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(metrics_from_json(line));
    }
    return out;
}

std::string metrics_to_csv(const std::vector<IterationMetrics>& series) {
    std::string out =
        "iteration,wall_seconds,mean_r_video,std_r_video,mean_r_audio,std_r_audio,"
        "mean_r_sync,std_r_sync,video_loss,audio_loss,conflict_rate\n";
    for (const IterationMetrics& m : series) {
        out += std::to_string(m.iteration);
        for (double v : {m.wall_seconds, m.mean_r_video, m.std_r_video, m.mean_r_audio,
                         m.std_r_audio, m.mean_r_sync, m.std_r_sync, m.video_loss, m.audio_loss,
                         m.conflict_rate})
            out += "," + csv_cell(v);
        out += "\n";
    }
    return out;
}

}  // namespace avnft
