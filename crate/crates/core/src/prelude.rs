#![allow(unused_imports)]

pub(crate) use alloc::boxed::Box;
pub(crate) use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
pub(crate) use alloc::vec;
pub(crate) use alloc::vec::Vec;
pub(crate) use num_traits::Float;

pub(crate) use crate::error::{Error, Result};
pub(crate) use crate::geom::{Point3, Vec3};
