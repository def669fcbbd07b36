#  Copyright 2026 The svio authors
#
#  Licensed under the Apache License, Version 2.0 (the "License");
#  you may not use this file except in compliance with the License.
#  You may obtain a copy of the License at
#
#      https://www.apache.org/licenses/LICENSE-2.0
#
#  Unless required by applicable law or agreed to in writing, software
#  distributed under the License is distributed on an "AS IS" BASIS,
#  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#  See the License for the specific language governing permissions and
#  limitations under the License.

"""Loading and saving run configurations as YAML.

A configuration file has up to four sections, each optional::

    filter:               # FilterConfig fields
      max_keyframe_clones: 2
      landmark_solver: ekf
      initial_sigmas: {theta: 0.0175, p: 0.05}
      noise: {sigma_g: 2.0e-4}   # optional, defaults to the noise section
    sim:                  # SimConfig fields
      trajectory: circle
      duration: 10.0
    noise:                # NoiseParams fields, shared by filter and simulator
      sigma_g: 1.7e-4
    camera:               # the rig, shared by filter and simulator
      intrinsics: [458.654, 457.296, 367.215, 248.375, 752, 480]
      stereo: true

Missing keys keep their defaults. Unknown keys are an error.
"""

import dataclasses
import typing

import yaml

from svio.common import InvalidConfig
from svio.filter import FilterConfig
from svio.propagation import NoiseParams
from svio.simulator import SimConfig
from svio.state import InitialSigmas

SECTIONS = ("filter", "sim", "noise", "camera")
CAMERA_KEYS = ("intrinsics", "stereo")

# Fields that are filled from other sections, not set directly.
_FILTER_DERIVED = ("noise", "cams", "initial_sigmas")
_SIM_DERIVED = ("noise", "intrinsics", "stereo")


def _field_names(cls: typing.Any) -> typing.List[str]:
    return [field.name for field in dataclasses.fields(cls)]


def _check_keys(
    section: str, values: typing.Mapping[str, typing.Any], allowed: typing.Iterable[str]
) -> None:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise InvalidConfig(
            "%s.%s" % (section, unknown[0]), "unknown key %r in section %r" % (unknown[0], section)
        )


def _section(document: typing.Mapping[str, typing.Any], name: str) -> typing.Dict[str, typing.Any]:
    values = document.get(name) or {}
    if not isinstance(values, dict):
        raise InvalidConfig(name, "section %r must be a mapping" % name)
    return dict(values)


def _tuple_values(values: typing.Dict[str, typing.Any], keys: typing.Iterable[str]) -> None:
    for key in keys:
        if key in values:
            values[key] = tuple(values[key])


def build_config(
    document: typing.Optional[typing.Mapping[str, typing.Any]],
) -> typing.Tuple[FilterConfig, SimConfig]:
    """Turns a parsed configuration document into validated configs.

    :raise InvalidConfig: on unknown sections or keys, or invalid values.
    """

    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise InvalidConfig("<root>", "configuration must be a mapping")
    _check_keys("<root>", document, SECTIONS)

    noise_values = _section(document, "noise")
    _check_keys("noise", noise_values, _field_names(NoiseParams))
    _tuple_values(noise_values, ["gravity"])

    camera_values = _section(document, "camera")
    _check_keys("camera", camera_values, CAMERA_KEYS)
    _tuple_values(camera_values, ["intrinsics"])

    sim_values = _section(document, "sim")
    sim_fields = [name for name in _field_names(SimConfig) if name not in _SIM_DERIVED]
    _check_keys("sim", sim_values, sim_fields)
    _tuple_values(sim_values, ["bias_a", "bias_g"])

    filter_values = _section(document, "filter")
    filter_fields = [name for name in _field_names(FilterConfig) if name != "cams"]
    _check_keys("filter", filter_values, filter_fields)
    filter_noise = filter_values.pop("noise", None) or noise_values
    if not isinstance(filter_noise, dict):
        raise InvalidConfig("filter.noise", "filter noise must be a mapping")
    _check_keys("filter.noise", filter_noise, _field_names(NoiseParams))
    _tuple_values(filter_noise, ["gravity"])
    sigma_values = filter_values.pop("initial_sigmas", None) or {}
    if not isinstance(sigma_values, dict):
        raise InvalidConfig("filter.initial_sigmas", "initial_sigmas must be a mapping")
    _check_keys("filter.initial_sigmas", sigma_values, _field_names(InitialSigmas))

    try:
        sim = SimConfig(noise=NoiseParams(**noise_values), **sim_values, **camera_values)
        filt = FilterConfig(
            noise=NoiseParams(**filter_noise),
            cams=sim.cameras(),
            initial_sigmas=InitialSigmas(**sigma_values),
            **filter_values,
        )
    except TypeError as ex:
        raise InvalidConfig("<root>", str(ex)) from ex

    sim.validate()
    filt.validate()
    return filt, sim


def load_config(path: str) -> typing.Tuple[FilterConfig, SimConfig]:
    """Reads a YAML configuration file.

    :raise InvalidConfig: when the file is not valid YAML or does not
        describe a valid configuration.
    :raise OSError: when the file cannot be read.
    """

    with open(path, "r", encoding="utf-8") as infile:
        try:
            document = yaml.safe_load(infile)
        except yaml.YAMLError as ex:
            raise InvalidConfig("<root>", "%s is not valid YAML: %s" % (path, ex)) from ex
    return build_config(document)


def default_config() -> typing.Tuple[FilterConfig, SimConfig]:
    """The configuration used when no file is given."""

    return build_config({})


def _plain(value: typing.Any) -> typing.Any:
    if isinstance(value, tuple):
        return [_plain(item) for item in value]
    if hasattr(value, "item"):
        return value.item()
    return value


def config_document(filt: FilterConfig, sim: SimConfig) -> typing.Dict[str, typing.Any]:
    """The YAML document describing a pair of configs.

    The shared noise section and the rig are taken from ``sim``; the filter
    noise is written into the filter section.
    """

    filter_values = {
        name: _plain(getattr(filt, name))
        for name in _field_names(FilterConfig)
        if name not in _FILTER_DERIVED
    }
    filter_values["initial_sigmas"] = {
        name: _plain(value) for name, value in dataclasses.asdict(filt.initial_sigmas).items()
    }
    filter_values["noise"] = {
        name: _plain(value) for name, value in dataclasses.asdict(filt.noise).items()
    }
    return {
        "filter": filter_values,
        "sim": {
            name: _plain(getattr(sim, name))
            for name in _field_names(SimConfig)
            if name not in _SIM_DERIVED
        },
        "noise": {name: _plain(value) for name, value in dataclasses.asdict(sim.noise).items()},
        "camera": {"intrinsics": _plain(sim.intrinsics), "stereo": sim.stereo},
    }


def save_config(path: str, filt: FilterConfig, sim: SimConfig) -> None:
    """Writes a configuration file that :py:func:`load_config` reads back."""

    with open(path, "w", encoding="utf-8") as outfile:
        yaml.safe_dump(
            config_document(filt, sim), outfile, default_flow_style=False, sort_keys=True
        )


__all__ = [
    "SECTIONS",
    "build_config",
    "load_config",
    "default_config",
    "config_document",
    "save_config",
]
