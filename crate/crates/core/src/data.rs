//! Bundled benchmark inputs.

use crate::error::Result;
use crate::network::{parse_tntp, Network, OdTable};

pub const SIOUX_FALLS_NET: &str = include_str!("../data/SiouxFalls_net.tntp");
pub const SIOUX_FALLS_TRIPS: &str = include_str!("../data/SiouxFalls_trips.tntp");

/// The Sioux Falls network (24 nodes, 76 links) and its 528-pair trip table.
pub fn sioux_falls() -> Result<(Network, OdTable)> {
    parse_tntp(SIOUX_FALLS_NET, SIOUX_FALLS_TRIPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sioux_falls_dimensions() {
        let (net, od) = sioux_falls().unwrap();
        assert_eq!(net.num_nodes(), 24);
        assert_eq!(net.num_links(), 76);
        assert_eq!(od.len(), 528);
        assert_eq!(od.total(), 360_600.0);
    }
}
