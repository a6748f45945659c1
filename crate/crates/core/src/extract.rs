//! Structure layouts from the DWARF debug sections of an ELF binary.
//!
//! Every DIE tagged `DW_TAG_class_type` or `DW_TAG_structure_type`, at any
//! depth of any unit, yields a [`RawTypeEntry`]. Its direct `DW_TAG_member`
//! children with a resolvable location become members; anything without one
//! (static members, constants) is dropped. Entries are then merged by name
//! into one [`StructureRecord`] each.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use gimli::{
    AttributeValue, DebuggingInformationEntry, EndianSlice, EntriesTreeNode, Reader, RunTimeEndian, Section,
    Unit, UnitOffset,
};
use object::{Object, ObjectSection};
use serde::{Deserialize, Serialize};

use crate::error::ExtractError;
use crate::profile::{sort_members, Architecture, MemberRecord, Profile, ProfileMeta, StructureRecord};

/// Name given to types and members without `DW_AT_name`.
pub const UNNAMED: &str = "UnNamed";

type Slice<'a> = EndianSlice<'a, RunTimeEndian>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMemberEntry {
    pub name: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTypeEntry {
    pub name: String,
    pub byte_size: Option<u64>,
    pub members: Vec<RawMemberEntry>,
    /// Index of the unit the DIE was found in, in traversal order.
    pub origin_unit: usize,
    pub is_declaration_only: bool,
}

impl RawTypeEntry {
    fn is_complete(&self) -> bool {
        !self.is_declaration_only && self.byte_size.is_some()
    }

    fn to_record(&self) -> StructureRecord {
        let mut members: Vec<MemberRecord> = self
            .members
            .iter()
            .map(|m| MemberRecord::new(m.name.clone(), m.offset))
            .collect();
        sort_members(&mut members);
        StructureRecord {
            name: self.name.clone(),
            size: self.byte_size.unwrap_or(0),
            members,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionMeta {
    pub binary_path: PathBuf,
    pub binary_size_bytes: u64,
    pub dwarf_versions_seen: BTreeSet<u16>,
    pub compilation_unit_count: u64,
    /// Class/structure DIEs encountered, declarations included.
    pub raw_type_die_count: u64,
    /// Distinct structure names retained after merging.
    pub unique_structure_count: u64,
    /// Members dropped because their location expression was not a constant
    /// offset.
    pub skipped_member_locations: u64,
    pub merge_conflicts: Vec<String>,
}

/// Labels attached to the profile; none of them are read from the binary
/// except the architecture, which is inferred when not given.
#[derive(Debug, Clone, Default)]
pub struct ExtractionHints {
    pub platform_version: String,
    pub architecture: Option<Architecture>,
    pub build_variant: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub profile: Profile,
    pub meta: ExtractionMeta,
}

/// Maps the ELF machine type onto the four supported architectures.
pub fn architecture_of(file: &object::File<'_>) -> Option<Architecture> {
    match file.architecture() {
        object::Architecture::Arm => Some(Architecture::Arm32),
        object::Architecture::Aarch64 => Some(Architecture::Arm64),
        object::Architecture::I386 => Some(Architecture::X86_32),
        object::Architecture::X86_64 => Some(Architecture::X86_64),
        object::Architecture::X86_64_X32 => Some(Architecture::X86_32),
        _ => None,
    }
}

fn read_binary(path: &Path) -> Result<Vec<u8>, ExtractError> {
    fs::read(path).map_err(|source| ExtractError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_elf<'d>(data: &'d [u8], path: &Path) -> Result<object::File<'d>, ExtractError> {
    let not_elf = || ExtractError::NotElf {
        path: path.to_owned(),
        offset: 0,
    };
    match object::FileKind::parse(data) {
        Ok(object::FileKind::Elf32 | object::FileKind::Elf64) => {}
        _ => return Err(not_elf()),
    }
    object::File::parse(data).map_err(|_| not_elf())
}

struct LoadedDwarf<'d> {
    sections: gimli::DwarfSections<Cow<'d, [u8]>>,
    endian: RunTimeEndian,
}

impl<'d> LoadedDwarf<'d> {
    fn load(file: &object::File<'d>, path: &Path) -> Result<Self, ExtractError> {
        let sections = gimli::DwarfSections::load(|id| -> Result<Cow<'d, [u8]>, ExtractError> {
            match file.section_by_name(id.name()) {
                Some(section) => section.uncompressed_data().map_err(|e| {
                    ExtractError::MalformedDwarf {
                        path: path.to_owned(),
                        section: id.name(),
                        offset: 0,
                        message: e.to_string(),
                    }
                }),
                None => Ok(Cow::Borrowed(&[])),
            }
        })?;
        let endian = if file.is_little_endian() {
            RunTimeEndian::Little
        } else {
            RunTimeEndian::Big
        };
        Ok(LoadedDwarf { sections, endian })
    }

    fn has_debug_info(&self) -> bool {
        let dwarf = self.dwarf();
        !dwarf.debug_info.reader().is_empty() || !dwarf.debug_types.reader().is_empty()
    }

    fn dwarf(&self) -> gimli::Dwarf<Slice<'_>> {
        self.sections.borrow(|s| EndianSlice::new(s, self.endian))
    }
}

/// Versions declared in the unit headers of `.debug_info` and `.debug_types`.
/// Empty when the binary carries no debug info.
pub fn detect_dwarf_versions(binary: &Path) -> Result<BTreeSet<u16>, ExtractError> {
    let data = read_binary(binary)?;
    let file = parse_elf(&data, binary)?;
    let loaded = LoadedDwarf::load(&file, binary)?;
    let dwarf = loaded.dwarf();
    let mut versions = BTreeSet::new();
    for_each_unit_header(&dwarf, binary, |header, _| {
        versions.insert(header.version());
        Ok(())
    })?;
    Ok(versions)
}

fn malformed(path: &Path, section: &'static str, offset: u64, err: gimli::Error) -> ExtractError {
    ExtractError::MalformedDwarf {
        path: path.to_owned(),
        section,
        offset,
        message: err.to_string(),
    }
}

/// Visits every unit header; the callback also receives the name of the
/// section the unit lives in.
fn for_each_unit_header<'a, F>(
    dwarf: &gimli::Dwarf<Slice<'a>>,
    path: &Path,
    mut visit: F,
) -> Result<(), ExtractError>
where
    F: FnMut(gimli::UnitHeader<Slice<'a>>, &'static str) -> Result<(), ExtractError>,
{
    let mut next_offset = 0u64;
    let mut units = dwarf.units();
    loop {
        match units.next() {
            Ok(Some(header)) => {
                next_offset = header.offset().0 as u64 + header.length_including_self() as u64;
                visit(header, ".debug_info")?;
            }
            Ok(None) => break,
            Err(e) => return Err(malformed(path, ".debug_info", next_offset, e)),
        }
    }
    next_offset = 0;
    let mut type_units = dwarf.type_units();
    loop {
        match type_units.next() {
            Ok(Some(header)) => {
                next_offset = header.offset().0 as u64 + header.length_including_self() as u64;
                visit(header, ".debug_types")?;
            }
            Ok(None) => break,
            Err(e) => return Err(malformed(path, ".debug_types", next_offset, e)),
        }
    }
    Ok(())
}

#[derive(Default)]
struct Collector {
    entries: Vec<RawTypeEntry>,
    raw_type_die_count: u64,
    skipped_member_locations: u64,
}

struct UnitWalk<'u, 'a> {
    dwarf: &'u gimli::Dwarf<Slice<'a>>,
    unit: &'u Unit<Slice<'a>>,
    unit_index: usize,
    unit_base: u64,
    section: &'static str,
    path: &'u Path,
    last_offset: u64,
}

impl<'u, 'a> UnitWalk<'u, 'a> {
    fn fail(&self, err: gimli::Error) -> ExtractError {
        malformed(self.path, self.section, self.last_offset, err)
    }

    fn note(&mut self, offset: UnitOffset) {
        self.last_offset = self.unit_base + offset.0 as u64;
    }

    fn string_attr(&self, entry: &DebuggingInformationEntry<Slice<'a>>, at: gimli::DwAt) -> Option<String> {
        let value = entry.attr_value(at)?;
        let s = self.dwarf.attr_string(self.unit, value).ok()?;
        Some(s.to_string_lossy().into_owned())
    }

    fn name_of(&self, entry: &DebuggingInformationEntry<Slice<'a>>) -> Option<String> {
        if let Some(name) = self.string_attr(entry, gimli::DW_AT_name) {
            return Some(name);
        }
        // Out-of-line definitions name themselves through their declaration.
        if let Some(AttributeValue::UnitRef(target)) = entry.attr_value(gimli::DW_AT_specification) {
            let decl = self.unit.entry(target).ok()?;
            return self.string_attr(&decl, gimli::DW_AT_name);
        }
        None
    }

    /// Byte size of a member's storage unit, following typedefs and
    /// qualifiers to the underlying type.
    fn storage_size(&self, member: &DebuggingInformationEntry<Slice<'a>>) -> Option<u64> {
        if let Some(size) = member.attr_value(gimli::DW_AT_byte_size).and_then(|v| v.udata_value()) {
            return Some(size);
        }
        let mut target = member.attr_value(gimli::DW_AT_type)?;
        for _ in 0..16 {
            let AttributeValue::UnitRef(offset) = target else {
                return None;
            };
            let ty = self.unit.entry(offset).ok()?;
            if let Some(size) = ty.attr_value(gimli::DW_AT_byte_size).and_then(|v| v.udata_value()) {
                return Some(size);
            }
            target = ty.attr_value(gimli::DW_AT_type)?;
        }
        None
    }

    fn member_offset(&self, member: &DebuggingInformationEntry<Slice<'a>>) -> MemberLocation {
        let bit_size = member
            .attr_value(gimli::DW_AT_bit_size)
            .and_then(|v| v.udata_value());
        if let Some(value) = member.attr_value(gimli::DW_AT_data_member_location) {
            let Some(byte_offset) = resolve_member_location(value, self.unit.encoding()) else {
                return MemberLocation::Unresolvable;
            };
            // Pre-DWARF-4 bitfields: DW_AT_bit_offset counts from the most
            // significant bit of the storage unit at `byte_offset`.
            if let (Some(bit_offset), Some(bit_size)) = (
                member.attr_value(gimli::DW_AT_bit_offset).and_then(|v| v.udata_value()),
                bit_size,
            ) {
                let first_bit = match self.storage_size(member) {
                    Some(storage) if self.dwarf.debug_info.reader().endian() == RunTimeEndian::Little => {
                        (byte_offset * 8 + storage * 8).checked_sub(bit_offset + bit_size)
                    }
                    Some(_) => Some(byte_offset * 8 + bit_offset),
                    None => None,
                };
                return MemberLocation::Offset(first_bit.map_or(byte_offset, |b| b / 8));
            }
            return MemberLocation::Offset(byte_offset);
        }
        if let Some(bits) = member
            .attr_value(gimli::DW_AT_data_bit_offset)
            .and_then(|v| v.udata_value())
        {
            return MemberLocation::Offset(bits / 8);
        }
        MemberLocation::Absent
    }

    fn walk(&mut self, node: EntriesTreeNode<'_, '_, Slice<'a>>, out: &mut Collector) -> Result<(), ExtractError> {
        let entry = node.entry().clone();
        self.note(entry.offset());
        let is_record = matches!(entry.tag(), gimli::DW_TAG_class_type | gimli::DW_TAG_structure_type);
        let mut record = is_record.then(|| {
            out.raw_type_die_count += 1;
            let declaration = matches!(
                entry.attr_value(gimli::DW_AT_declaration),
                Some(AttributeValue::Flag(true))
            );
            RawTypeEntry {
                name: self.name_of(&entry).unwrap_or_else(|| UNNAMED.to_owned()),
                byte_size: entry.attr_value(gimli::DW_AT_byte_size).and_then(|v| v.udata_value()),
                members: Vec::new(),
                origin_unit: self.unit_index,
                is_declaration_only: declaration,
            }
        });

        let mut children = node.children();
        while let Some(child) = children.next().map_err(|e| self.fail(e))? {
            if let Some(record) = record.as_mut() {
                let child_entry = child.entry();
                self.note(child_entry.offset());
                if child_entry.tag() == gimli::DW_TAG_member {
                    match self.member_offset(child_entry) {
                        MemberLocation::Offset(offset) if offset < (1 << 32) => {
                            record.members.push(RawMemberEntry {
                                name: self.name_of(child_entry).unwrap_or_else(|| UNNAMED.to_owned()),
                                offset,
                            });
                        }
                        MemberLocation::Offset(_) | MemberLocation::Unresolvable => {
                            out.skipped_member_locations += 1;
                        }
                        MemberLocation::Absent => {}
                    }
                }
            }
            self.walk(child, out)?;
        }
        if let Some(record) = record {
            out.entries.push(record);
        }
        Ok(())
    }
}

#[derive(Debug, PartialEq, Eq)]
enum MemberLocation {
    Offset(u64),
    Unresolvable,
    Absent,
}

/// Resolves a `DW_AT_data_member_location` value to a byte offset. Constant
/// forms and the `DW_OP_plus_uconst N` / `DW_OP_constu N DW_OP_plus`
/// expressions are understood; anything else yields `None`.
pub fn resolve_member_location<R: Reader>(value: AttributeValue<R>, encoding: gimli::Encoding) -> Option<u64> {
    match value {
        AttributeValue::Sdata(v) => u64::try_from(v).ok(),
        AttributeValue::Exprloc(expr) => resolve_expression(expr, encoding),
        AttributeValue::Block(bytes) => resolve_expression(gimli::Expression(bytes), encoding),
        other => other.udata_value(),
    }
}

fn resolve_expression<R: Reader>(expr: gimli::Expression<R>, encoding: gimli::Encoding) -> Option<u64> {
    let mut ops = expr.operations(encoding);
    let mut parsed = Vec::new();
    while let Some(op) = ops.next().ok()? {
        parsed.push(op);
        if parsed.len() > 2 {
            return None;
        }
    }
    // The structure's base address is implicitly on the stack.
    match parsed.as_slice() {
        [gimli::Operation::PlusConstant { value }] => Some(*value),
        [gimli::Operation::UnsignedConstant { value }, gimli::Operation::Plus] => Some(*value),
        _ => None,
    }
}

fn collect_entries<'a>(
    dwarf: &gimli::Dwarf<Slice<'a>>,
    path: &Path,
    versions: &mut BTreeSet<u16>,
    unit_count: &mut u64,
) -> Result<Collector, ExtractError> {
    let mut out = Collector::default();
    let mut unit_index = 0usize;
    for_each_unit_header(dwarf, path, |header, section| {
        versions.insert(header.version());
        *unit_count += 1;
        let unit_base = header.offset().0 as u64;
        let abbrev_offset = header.debug_abbrev_offset().0 as u64;
        let unit = dwarf
            .unit(header)
            .map_err(|e| malformed(path, ".debug_abbrev", abbrev_offset, e))?;
        let mut walk = UnitWalk {
            dwarf,
            unit: &unit,
            unit_index,
            unit_base,
            section,
            path,
            last_offset: unit_base,
        };
        let mut tree = unit.entries_tree(None).map_err(|e| walk.fail(e))?;
        let root = tree.root().map_err(|e| walk.fail(e))?;
        walk.walk(root, &mut out)?;
        unit_index += 1;
        Ok(())
    })?;
    Ok(out)
}

/// Collapses repeated definitions of one name into a single record.
///
/// When every complete definition agrees, the earliest is kept. Otherwise the
/// one with the most members wins (then the largest size, then the earliest
/// unit) and the name is reported as a conflict. Declarations never win;
/// names that only have declarations are dropped.
pub fn merge_duplicate_definitions(
    entries: &[RawTypeEntry],
) -> (BTreeMap<String, StructureRecord>, Vec<String>) {
    let mut by_name: BTreeMap<&str, Vec<&RawTypeEntry>> = BTreeMap::new();
    for entry in entries.iter().filter(|e| e.is_complete()) {
        by_name.entry(entry.name.as_str()).or_default().push(entry);
    }
    let mut catalog = BTreeMap::new();
    let mut conflicts = Vec::new();
    for (name, mut defs) in by_name {
        defs.sort_by_key(|d| d.origin_unit);
        let records: Vec<StructureRecord> = defs.iter().map(|d| d.to_record()).collect();
        let winner = if records.iter().all(|r| *r == records[0]) {
            0
        } else {
            conflicts.push(name.to_owned());
            (0..defs.len())
                .min_by(|&a, &b| {
                    defs[b]
                        .members
                        .len()
                        .cmp(&defs[a].members.len())
                        .then_with(|| defs[b].byte_size.cmp(&defs[a].byte_size))
                        .then_with(|| defs[a].origin_unit.cmp(&defs[b].origin_unit))
                })
                .unwrap_or(0)
        };
        catalog.insert(name.to_owned(), records[winner].clone());
    }
    (catalog, conflicts)
}

/// Extracts the structure catalog of an ELF binary already in memory.
/// `path` is only used to label errors and metadata.
pub fn extract_from_bytes(
    data: &[u8],
    path: &Path,
    hints: &ExtractionHints,
) -> Result<Extraction, ExtractError> {
    let file = parse_elf(data, path)?;
    let architecture = match hints.architecture.or_else(|| architecture_of(&file)) {
        Some(arch) => arch,
        None => {
            return Err(ExtractError::UnknownArchitecture {
                path: path.to_owned(),
                machine: format!("{:?}", file.architecture()),
            })
        }
    };
    let loaded = LoadedDwarf::load(&file, path)?;
    if !loaded.has_debug_info() {
        return Err(ExtractError::NoDebugInfo {
            path: path.to_owned(),
        });
    }
    let dwarf = loaded.dwarf();
    let mut versions = BTreeSet::new();
    let mut unit_count = 0;
    let collected = collect_entries(&dwarf, path, &mut versions, &mut unit_count)?;
    let (catalog, conflicts) = merge_duplicate_definitions(&collected.entries);

    let mut meta = ProfileMeta::new(hints.platform_version.clone(), architecture);
    if let Some(variant) = &hints.build_variant {
        meta.build_variant = variant.clone();
    }
    meta.binary_size_bytes = data.len() as u64;
    meta.dwarf_versions_seen = versions.clone();
    meta.raw_type_die_count = collected.raw_type_die_count;

    let extraction_meta = ExtractionMeta {
        binary_path: path.to_owned(),
        binary_size_bytes: data.len() as u64,
        dwarf_versions_seen: versions,
        compilation_unit_count: unit_count,
        raw_type_die_count: collected.raw_type_die_count,
        unique_structure_count: catalog.len() as u64,
        skipped_member_locations: collected.skipped_member_locations,
        merge_conflicts: conflicts,
    };
    Ok(Extraction {
        profile: Profile {
            meta,
            structures: catalog,
        },
        meta: extraction_meta,
    })
}

/// Reads `binary` and extracts its structure catalog.
pub fn extract_profile(binary: &Path, hints: &ExtractionHints) -> Result<Extraction, ExtractError> {
    let data = read_binary(binary)?;
    extract_from_bytes(&data, binary, hints)
}
