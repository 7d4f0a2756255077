"""Contract DSL parsing, serialization, and static validation."""

from __future__ import annotations

import pytest
import yaml

from mlguard.contract import (
    ContractSpec,
    DistributionMatches,
    ProbabilitiesSumToOne,
    RangeCheck,
    SchemaMatches,
    parse_contract,
    serialize_contract,
    validate_contract,
)
from mlguard.errors import (
    ContractSyntaxError,
    MissingRequiredField,
    ThresholdOutOfRange,
    UnexpectedKey,
    UnknownAction,
    UnknownDetectorMethod,
    UnknownDetectorType,
)
from mlguard.resources import MemResolver

from conftest import CANONICAL_CONTRACT, contract_text


class TestCanonicalDocument:
    def test_parses_with_expected_fields(self):
        spec = parse_contract(CANONICAL_CONTRACT)
        assert spec.model.name == "seizure_detection_ml_model"
        assert spec.model.location == "/pretrained/seizure_model.onnx"
        assert spec.model.documentation == "/doc/seizure_model_card.html"
        assert [d.id for d in spec.data] == ["input_steam", "output_stream",
                                             "/data/eeg_train"]

        dm = spec.preconditions[0]
        assert isinstance(dm, DistributionMatches)
        assert dm.dataset_a.id == "input_steam"
        assert dm.dataset_b.id == "/data/eeg_train"
        assert dm.validation_model.type == "out_of_distribution_detector"
        assert dm.validation_model.method == "likelihood_ratios_for_ood"
        assert dm.trigger.confidence_threshold == 0.95
        assert dm.action == "log_warning"

        sm = spec.preconditions[1]
        assert isinstance(sm, SchemaMatches)
        assert sm.dataset.id == "input_steam"
        assert sm.schema == "/schema/eeg-10-20-system-256hz"
        assert sm.action == "exception"

        (post,) = spec.postconditions
        assert isinstance(post, ProbabilitiesSumToOne)
        assert post.dataset.id == "output_stream"
        assert post.action == "exception"

    def test_round_trips_through_serialize_and_parse(self):
        spec = parse_contract(CANONICAL_CONTRACT)
        again = parse_contract(serialize_contract(spec))
        assert again == spec

    def test_condition_names_follow_document_order(self):
        spec = parse_contract(CANONICAL_CONTRACT)
        names = [name for name, _ in spec.conditions()]
        assert names == [
            "Preconditions.Distribution_Matches",
            "Preconditions.Schema_Matches",
            "Postconditions.Probabilities_sum_to_one",
        ]


class TestParseErrors:
    def test_not_yaml(self):
        with pytest.raises(ContractSyntaxError):
            parse_contract("Contract: [unterminated")

    def test_missing_contract_root_key(self):
        with pytest.raises(MissingRequiredField):
            parse_contract("{}\n")

    def test_unknown_root_key(self):
        with pytest.raises(UnexpectedKey):
            parse_contract("NotAContract: {}\n")

    def test_duplicate_keys_rejected(self):
        doc = CANONICAL_CONTRACT + "   Postconditions:\n      Probabilities_sum_to_one:\n"
        with pytest.raises(ContractSyntaxError):
            parse_contract(doc)

    def test_unknown_key_names_its_path(self):
        doc = CANONICAL_CONTRACT.replace("      Documentation:",
                                         "      Doc_umentation:")
        with pytest.raises(UnexpectedKey) as exc:
            parse_contract(doc)
        assert "Contract.Model" in str(exc.value)

    def test_missing_model_name(self):
        doc = CANONICAL_CONTRACT.replace("      Name: seizure_detection_ml_model\n", "")
        with pytest.raises(MissingRequiredField) as exc:
            parse_contract(doc)
        assert "Contract.Model.Name" in str(exc.value)

    def test_missing_trigger_threshold(self):
        doc = CANONICAL_CONTRACT.replace(
            "         Trigger_conditions:\n            Confidence_threshold: 0.95\n",
            "")
        with pytest.raises(MissingRequiredField):
            parse_contract(doc)

    @pytest.mark.parametrize("value", ["0", "1", "1.5", "-0.2"])
    def test_threshold_must_lie_in_open_unit_interval(self, value):
        doc = CANONICAL_CONTRACT.replace("Confidence_threshold: 0.95",
                                         f"Confidence_threshold: {value}")
        with pytest.raises(ThresholdOutOfRange) as exc:
            parse_contract(doc)
        assert ("Contract.Preconditions.Distribution_Matches"
                ".Trigger_conditions.Confidence_threshold") in str(exc.value)

    def test_threshold_must_be_a_number(self):
        doc = CANONICAL_CONTRACT.replace("Confidence_threshold: 0.95",
                                         "Confidence_threshold: high")
        with pytest.raises(ContractSyntaxError):
            parse_contract(doc)

    def test_unknown_action(self):
        doc = CANONICAL_CONTRACT.replace("Action_if_violated: log_warning",
                                         "Action_if_violated: page_oncall")
        with pytest.raises(UnknownAction):
            parse_contract(doc)

    def test_unknown_detector_type(self):
        doc = CANONICAL_CONTRACT.replace("Type: out_of_distribution_detector",
                                         "Type: anomaly_scorer")
        with pytest.raises(UnknownDetectorType):
            parse_contract(doc)

    def test_unknown_detector_method(self):
        doc = CANONICAL_CONTRACT.replace("Method: likelihood_ratios_for_ood",
                                         "Method: isolation_forest")
        with pytest.raises(UnknownDetectorMethod):
            parse_contract(doc)

    def test_method_is_optional(self):
        doc = CANONICAL_CONTRACT.replace(
            "            Method: likelihood_ratios_for_ood\n", "")
        spec = parse_contract(doc)
        assert spec.preconditions[0].validation_model.method is None


_PSTO_BLOCK = ("    Probabilities_sum_to_one:\n"
               "      Dataset: output_stream\n"
               "      Action_if_violated: exception\n")


class TestExtensions:
    def test_tolerance_default_and_override(self):
        spec = parse_contract(contract_text())
        assert spec.postconditions[0].tolerance == 1e-6

        doc = contract_text().replace(
            _PSTO_BLOCK, _PSTO_BLOCK.replace(
                "      Action_if_violated:",
                "      Tolerance: 0.001\n      Action_if_violated:"))
        spec = parse_contract(doc)
        assert spec.postconditions[0].tolerance == 0.001

    def test_tolerance_must_be_positive(self):
        doc = contract_text().replace(
            _PSTO_BLOCK, _PSTO_BLOCK.replace(
                "      Action_if_violated:",
                "      Tolerance: 0\n      Action_if_violated:"))
        with pytest.raises(ThresholdOutOfRange):
            parse_contract(doc)

    def test_range_check_parses(self):
        doc = contract_text() + (
            "    Range_Check:\n"
            "      Dataset: output_stream\n"
            "      Field: pos\n"
            "      Min: 0\n"
            "      Max: 1\n"
            "      Action_if_violated: exception\n"
        )
        spec = parse_contract(doc)
        rc = spec.postconditions[-1]
        assert isinstance(rc, RangeCheck)
        assert (rc.field, rc.min, rc.max) == ("pos", 0, 1)

    def test_range_check_min_above_max_rejected(self):
        doc = contract_text() + (
            "    Range_Check:\n"
            "      Dataset: output_stream\n"
            "      Field: pos\n"
            "      Min: 2\n"
            "      Max: 1\n"
            "      Action_if_violated: exception\n"
        )
        with pytest.raises(ContractSyntaxError):
            parse_contract(doc)

    def test_range_check_bounds_are_each_optional(self):
        doc = contract_text() + (
            "    Range_Check:\n"
            "      Dataset: output_stream\n"
            "      Field: pos\n"
            "      Max: 1\n"
            "      Action_if_violated: exception\n"
        )
        rc = parse_contract(doc).postconditions[-1]
        assert (rc.min, rc.max) == (None, 1)


class TestSerialization:
    def test_yaml_key_order_matches_the_dsl(self):
        spec = parse_contract(CANONICAL_CONTRACT)
        doc = yaml.safe_load(serialize_contract(spec))
        body = doc["Contract"]
        assert list(body) == ["Model", "Data", "Preconditions", "Postconditions"]
        dm = body["Preconditions"]["Distribution_Matches"]
        assert list(dm) == ["DatasetA", "DatasetB", "Validation_model",
                            "Trigger_conditions", "Action_if_violated"]

    def test_serialization_is_deterministic(self):
        spec = parse_contract(CANONICAL_CONTRACT)
        assert serialize_contract(spec) == serialize_contract(spec)

    def test_default_tolerance_is_omitted(self):
        spec = parse_contract(contract_text())
        assert "Tolerance" not in serialize_contract(spec)

    @pytest.mark.parametrize("kwargs", [
        {},
        {"dm_action": "propagate_uncertainty"},
        {"method": "kolmogorov_smirnov", "confidence": 0.99},
        {"method": "mahalanobis_distance", "schema_action": "log_warning"},
        {"location": "https://models.example/v2"},
    ])
    def test_round_trip_is_identity_across_variants(self, kwargs):
        spec = parse_contract(contract_text(**kwargs))
        assert parse_contract(serialize_contract(spec)) == spec


class TestValidateContract:
    def _env(self, extra=None):
        entries = {
            "/data/train": "f_00\n0.0\n",
            "/schema/synth": "{}",
            "/docs/model.md": "# doc\n",
            "/pretrained/linear8.json": "{}",
        }
        entries.update(extra or {})
        return MemResolver(entries)

    def test_clean_contract_has_no_errors(self):
        spec = parse_contract(contract_text())
        diags = validate_contract(spec, self._env())
        assert not [d for d in diags if d.severity == "error"]

    def test_undeclared_stream_id_is_an_error(self):
        doc = contract_text().replace("      DatasetA: input_steam",
                                      "      DatasetA: mystery_stream")
        spec = parse_contract(doc)
        diags = validate_contract(spec, self._env())
        assert any(d.severity == "error" and "mystery_stream" in d.message
                   for d in diags)

    def test_path_style_ids_do_not_need_declaration(self):
        doc = contract_text().replace(
            "    - /data/train\n", "")
        spec = parse_contract(doc)
        diags = validate_contract(spec, self._env())
        assert not [d for d in diags if d.severity == "error"]

    def test_unresolvable_reference_dataset_is_an_error(self):
        spec = parse_contract(contract_text())
        env = MemResolver({"/schema/synth": "{}", "/docs/model.md": "x"})
        diags = validate_contract(spec, env)
        assert any(d.severity == "error" and "/data/train" in d.message
                   for d in diags)

    def test_unresolvable_schema_is_an_error(self):
        spec = parse_contract(contract_text())
        env = MemResolver({"/data/train": "f_00\n0.0\n", "/docs/model.md": "x"})
        diags = validate_contract(spec, env)
        assert any(d.severity == "error" and "/schema/synth" in d.message
                   for d in diags)

    def test_missing_documentation_is_only_a_warning(self):
        spec = parse_contract(contract_text())
        env = self._env()
        env.entries.pop("/docs/model.md", None)
        diags = validate_contract(spec, env)
        assert any(d.severity == "warning" and "documentation" in d.message.lower()
                   for d in diags)
        assert not [d for d in diags if d.severity == "error"]


class TestGrammarInvariants:
    def test_empty_condition_sections_are_valid(self):
        doc = ("Contract:\n"
               "  Model:\n"
               "    Name: m\n"
               "    Location: /m.json\n"
               "  Data:\n"
               "    - input_steam\n"
               "  Preconditions:\n"
               "  Postconditions:\n")
        spec = parse_contract(doc)
        assert spec.preconditions == ()
        assert spec.postconditions == ()
        assert parse_contract(serialize_contract(spec)) == spec

    # Deleting any single required line must yield a MissingRequiredField.
    @pytest.mark.parametrize("line", [
        "      Name: seizure_detection_ml_model\n",
        "      Location: /pretrained/seizure_model.onnx\n",
        "         DatasetA: input_steam\n",
        "         DatasetB: /data/eeg_train\n",
        "            Type: out_of_distribution_detector\n",
        "         Action_if_violated: log_warning\n",
        "         Dataset: input_steam\n",
        "         Schema: /schema/eeg-10-20-system-256hz\n",
    ])
    def test_rejection_completeness(self, line):
        assert line in CANONICAL_CONTRACT
        with pytest.raises(MissingRequiredField):
            parse_contract(CANONICAL_CONTRACT.replace(line, ""))

    def test_deleting_nested_required_blocks(self):
        no_vm = CANONICAL_CONTRACT.replace(
            "         Validation_model:\n"
            "            Type: out_of_distribution_detector\n"
            "            Method: likelihood_ratios_for_ood\n", "")
        with pytest.raises(MissingRequiredField):
            parse_contract(no_vm)
        no_trigger = CANONICAL_CONTRACT.replace(
            "         Trigger_conditions:\n"
            "            Confidence_threshold: 0.95\n", "")
        with pytest.raises(MissingRequiredField):
            parse_contract(no_trigger)

    def test_action_closure(self):
        accepted = []
        for action in ("log_warning", "exception", "propagate_uncertainty",
                       "warn", "raise", "ignore", "LOG_WARNING"):
            doc = contract_text(dm_action=action)
            try:
                parse_contract(doc)
            except UnknownAction:
                continue
            accepted.append(action)
        assert accepted == ["log_warning", "exception", "propagate_uncertainty"]

    def test_serialize_is_a_fixpoint_after_one_cycle(self):
        for kwargs in ({}, {"dm_action": "propagate_uncertainty"},
                       {"schema_action": "log_warning"}):
            text_1 = serialize_contract(parse_contract(contract_text(**kwargs)))
            text_2 = serialize_contract(parse_contract(text_1))
            assert text_1 == text_2


def test_contract_spec_is_immutable():
    spec = parse_contract(CANONICAL_CONTRACT)
    assert isinstance(spec, ContractSpec)
    with pytest.raises(AttributeError):
        spec.model = None
