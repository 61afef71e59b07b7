#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "cryda/cli.hpp"
#include "cryda/config.hpp"
#include "cryda/dsp.hpp"
#include "cryda/errors.hpp"
#include "cryda/metrics.hpp"

namespace py = pybind11;

namespace {

cryda::dsp::AudioClip clip_from_array(py::array_t<float, py::array::c_style> samples,
                                      int sample_rate) {
    if (samples.ndim() != 1) {
        throw cryda::ShapeError("samples must be a one-dimensional float array");
    }
    cryda::dsp::AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.samples.assign(samples.data(), samples.data() + samples.size());
    return clip;
}

py::array_t<float> log_mel_array(py::array_t<float, py::array::c_style> samples,
                                 int sample_rate) {
    cryda::dsp::FeatureConfig cfg;
    cfg.sample_rate = sample_rate;
    auto feats = cryda::dsp::log_mel(clip_from_array(std::move(samples), sample_rate), cfg);
    const auto& t = feats.frames;
    py::array_t<float> out({t.shape[0], t.shape[1]});
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

py::dict pitch_dict(py::array_t<float, py::array::c_style> samples, int sample_rate,
                    double fmin, double fmax) {
    auto track =
        cryda::dsp::estimate_pitch(clip_from_array(std::move(samples), sample_rate), fmin, fmax);
    py::ssize_t n = py::ssize_t(track.frames.size());
    py::array_t<float> f0(n);
    py::array_t<bool> voiced(n);
    for (py::ssize_t i = 0; i < n; ++i) {
        f0.mutable_data()[i] = track.frames[std::size_t(i)].f0;
        voiced.mutable_data()[i] = track.frames[std::size_t(i)].voiced;
    }
    py::dict out;
    out["f0"] = std::move(f0);
    out["voiced"] = std::move(voiced);
    out["hop"] = track.hop;
    out["sample_rate"] = track.sample_rate;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of the cryda toolkit";

    // Translators are tried newest-first, so the base class goes first and
    // the most derived classes last.
    py::register_exception<cryda::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<cryda::IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<cryda::DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<cryda::ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("run_cli", &cryda::cli::run_cli, py::arg("args"),
          "Run one cryda command in-process; returns the exit code");

    m.def(
        "default_config_ini",
        [] { return cryda::config::to_ini(cryda::config::default_config()); },
        "Fully resolved default experiment config as ini text");

    m.def(
        "validate_config",
        [](const std::string& text) { cryda::config::parse_config(text); },
        py::arg("text"), "Parse config text, raising ConfigError on any problem");

    m.def("auc", &cryda::metrics::auc, py::arg("scores"), py::arg("labels"),
          "Area under the ROC curve of scores against binary labels");

    m.def("log_mel", &log_mel_array, py::arg("samples"), py::arg("sample_rate") = 16000,
          "Log-mel feature frames of a mono float signal, shape [frames, n_mels]");

    m.def("estimate_pitch", &pitch_dict, py::arg("samples"), py::arg("sample_rate") = 16000,
          py::arg("fmin") = 250.0, py::arg("fmax") = 1000.0,
          "Per-frame pitch track: dict with f0, voiced, hop, sample_rate");
}
