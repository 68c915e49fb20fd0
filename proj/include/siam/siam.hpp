#pragma once

#include "siam/acquisition.hpp"
#include "siam/analysis.hpp"
#include "siam/beamforming.hpp"
#include "siam/cli.hpp"
#include "siam/error.hpp"
#include "siam/fft.hpp"
#include "siam/geometry.hpp"
#include "siam/geometry_io.hpp"
#include "siam/json_util.hpp"
#include "siam/map_io.hpp"
#include "siam/packet.hpp"
#include "siam/parallel.hpp"
#include "siam/pcm_io.hpp"
#include "siam/propagation.hpp"
#include "siam/scene_io.hpp"
#include "siam/spectral.hpp"
#include "siam/spectral_io.hpp"
#include "siam/synthesis.hpp"
#include "siam/types.hpp"
