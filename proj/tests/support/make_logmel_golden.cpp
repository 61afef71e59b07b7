// Writes the frozen log-mel reference for the golden-file test. Run once;
// the output is committed under tests/data/.

#include <cstdio>
#include <fstream>

#include "cryda/dsp.hpp"
#include "support/golden_clip.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: %s <output.bin>\n", argv[0]);
        return 2;
    }
    const cryda::dsp::SpectrogramFeatures feats =
        cryda::dsp::log_mel(testsupport::golden_clip(), cryda::dsp::FeatureConfig{});
    std::ofstream out(argv[1], std::ios::binary);
    if (!out) {
        std::fprintf(stderr, "cannot open %s\n", argv[1]);
        return 2;
    }
    out.write(reinterpret_cast<const char*>(feats.frames.data.data()),
              std::streamsize(feats.frames.data.size() * sizeof(float)));
    std::printf("wrote %zu values (%d x %d)\n", feats.frames.data.size(),
                feats.frames.dim(0), feats.frames.dim(1));
    return 0;
}
