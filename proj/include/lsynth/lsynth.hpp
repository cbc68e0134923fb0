// Copyright (c) 2026 The latentsynth Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "lsynth/audio_io.hpp"
#include "lsynth/base64.hpp"
#include "lsynth/config.hpp"
#include "lsynth/corpus.hpp"
#include "lsynth/cqt.hpp"
#include "lsynth/dataset.hpp"
#include "lsynth/errors.hpp"
#include "lsynth/fft.hpp"
#include "lsynth/latent_synth.hpp"
#include "lsynth/phase_recovery.hpp"
#include "lsynth/service.hpp"
#include "lsynth/tensor_io.hpp"
#include "lsynth/vae.hpp"
#include "lsynth/websocket.hpp"
