/// Twenty molecules, three SMILES renderings each, with the molecular
/// hydrogen count from the formula.
pub const CORPUS: [(&str, [&str; 3], u32); 20] = [
    ("ethanol", ["CCO", "OCC", "C(O)C"], 6),
    ("acetic acid", ["CC(=O)O", "OC(C)=O", "O=C(O)C"], 4),
    ("toluene", ["Cc1ccccc1", "c1ccccc1C", "c1ccc(C)cc1"], 8),
    ("phenol", ["Oc1ccccc1", "c1ccc(O)cc1", "c1cc(O)ccc1"], 6),
    ("isobutanol", ["CC(C)CO", "OCC(C)C", "C(C)(C)CO"], 10),
    ("ethyl acetate", ["CCOC(C)=O", "CC(=O)OCC", "O=C(OCC)C"], 8),
    ("cyclohexanol", ["OC1CCCCC1", "C1CCC(O)CC1", "C1CC(CCC1)O"], 12),
    ("pyridine", ["c1ccncc1", "n1ccccc1", "c1cnccc1"], 5),
    ("limonene", ["CC1=CCC(CC1)C(C)=C", "C=C(C)C1CCC(C)=CC1", "CC(=C)C1CC=C(C)CC1"], 16),
    ("vanillin", ["COc1cc(C=O)ccc1O", "O=Cc1ccc(O)c(OC)c1", "Oc1ccc(cc1OC)C=O"], 8),
    ("acetaldehyde", ["CC=O", "O=CC", "C(C)=O"], 4),
    ("glycine zwitterion", ["[NH3+]CC([O-])=O", "[O-]C(=O)C[NH3+]", "C([NH3+])C(=O)[O-]"], 5),
    ("naphthalene", ["c1ccc2ccccc2c1", "c1cc2ccccc2cc1", "c12ccccc1cccc2"], 8),
    ("thiophene", ["c1ccsc1", "s1cccc1", "c1sccc1"], 4),
    ("chlorobenzene", ["Clc1ccccc1", "c1ccc(Cl)cc1", "c1cc(Cl)ccc1"], 5),
    ("acetophenone", ["CC(=O)c1ccccc1", "O=C(C)c1ccccc1", "c1ccc(cc1)C(C)=O"], 8),
    ("ethyl butyrate", ["CCCC(=O)OCC", "CCOC(=O)CCC", "O=C(CCC)OCC"], 12),
    ("indole", ["c1ccc2[nH]ccc2c1", "[nH]1ccc2ccccc21", "c1cc2cc[nH]c2cc1"], 7),
    ("cinnamaldehyde", ["O=CC=Cc1ccccc1", "c1ccc(cc1)C=CC=O", "C(=O)C=Cc1ccccc1"], 8),
    ("menthol", ["CC(C)C1CCC(C)CC1O", "OC1CC(C)CCC1C(C)C", "CC1CCC(C(C)C)C(O)C1"], 20),
];
