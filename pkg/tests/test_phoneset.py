import pytest

from mddkit.phoneset import (
    PhonemeAlphabet,
    PhonesetError,
    default_alphabet,
    load_alphabet,
    normalize_symbol,
    save_alphabet,
    validate_sequence,
)


def write_alphabet(tmp_path, text):
    path = tmp_path / "alphabet.txt"
    path.write_text(text, encoding="utf-8")
    return path


def test_default_inventory_is_42_symbols():
    alphabet = default_alphabet()
    assert alphabet.size == 42
    assert alphabet.blank_id == 42
    assert alphabet.output_dim == 43
    assert alphabet.classify(alphabet.id_of("IY")) == "vowel"
    assert alphabet.classify(alphabet.id_of("Z")) == "consonant"
    assert alphabet.classify(alphabet.id_of("SIL")) == "silence"


def test_load_single_line(tmp_path):
    alphabet = load_alphabet(write_alphabet(tmp_path, "AA vowel\n"))
    assert alphabet.size == 1
    assert alphabet.blank_id == 1


def test_duplicate_symbol_rejected(tmp_path):
    with pytest.raises(PhonesetError, match="duplicate"):
        load_alphabet(write_alphabet(tmp_path, "AA vowel\nAA vowel\n"))


def test_unknown_class_rejected(tmp_path):
    with pytest.raises(PhonesetError, match="class"):
        load_alphabet(write_alphabet(tmp_path, "AA nasal\n"))


def test_empty_file_rejected(tmp_path):
    with pytest.raises(PhonesetError, match="empty"):
        load_alphabet(write_alphabet(tmp_path, "# nothing here\n"))


def test_case_and_stress_normalization(tmp_path):
    alphabet = load_alphabet(write_alphabet(tmp_path, "ah vowel\nb consonant\n"))
    assert alphabet.symbols == ("AH", "B")
    # stress-marked variants collapse on lookup
    assert alphabet.id_of("AH0") == alphabet.id_of("ah1") == alphabet.id_of("AH")
    assert normalize_symbol("IY2") == "IY"


def test_stress_collision_is_duplicate(tmp_path):
    with pytest.raises(PhonesetError, match="duplicate"):
        load_alphabet(write_alphabet(tmp_path, "AH0 vowel\nAH1 vowel\n"))


def test_blank_label_forbidden():
    with pytest.raises(PhonesetError, match="blank"):
        PhonemeAlphabet(("<b>",), {"<b>": "vowel"})


def test_roundtrip_byte_identical(tmp_path):
    src = write_alphabet(tmp_path, "AA vowel\nB consonant\nSIL silence\n")
    alphabet = load_alphabet(src)
    dst = tmp_path / "copy.txt"
    save_alphabet(alphabet, dst)
    assert dst.read_bytes() == src.read_bytes()


def test_classify_every_id_and_blank_errors(abc_alphabet):
    for pid in range(abc_alphabet.size):
        assert abc_alphabet.classify(pid) in ("vowel", "consonant", "silence")
    with pytest.raises(PhonesetError):
        abc_alphabet.classify(abc_alphabet.blank_id)
    with pytest.raises(PhonesetError):
        abc_alphabet.classify(-1)


def test_validate_sequence(abc_alphabet):
    assert validate_sequence(abc_alphabet, [0, 2, 1]) == [0, 2, 1]
    with pytest.raises(PhonesetError):
        validate_sequence(abc_alphabet, [0, 3])  # blank id

def test_encode_decode_roundtrip(abc_alphabet):
    ids = abc_alphabet.encode(["a", "C", "B"])
    assert ids == [0, 2, 1]
    assert abc_alphabet.decode(ids) == ["A", "C", "B"]
